//! Sentence-embedding backends used to compare candidate responses.
//!
//! Three implementations are provided:
//!
//! * [`PrecomputedBackend`] reads vectors keyed by exact text from a JSONL file
//!   whose first line is a `{"backend": name, "dimension": d}` header.
//! * [`HttpBackend`] posts `{"texts": [...]}` to an external embedding process
//!   and expects `{"vectors": [[...], ...]}` back.
//! * [`HashingBackend`] projects unigrams and bigrams into a fixed dimension by
//!   feature hashing; deterministic and dependency-free, used for tests and demos.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("no embedding stored for text {0:?}")]
    UnknownText(String),
    #[error("embedding file {path}:{line}: {message}")]
    File { path: String, line: usize, message: String },
    #[error("embedding service: {0}")]
    Remote(String),
    #[error("backend returned {got} vectors of dimension {dim}, expected {expected_count} of dimension {expected_dim}")]
    Shape { got: usize, dim: usize, expected_count: usize, expected_dim: usize },
    #[error("non-finite value in embedding")]
    NonFinite,
}

pub trait EmbeddingBackend: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// One vector per input text, in order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError>;
    /// Whether `embed` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn check_shape(vectors: &[Vec<f64>], count: usize, dim: usize) -> Result<(), EmbeddingError> {
    if vectors.len() != count || vectors.iter().any(|v| v.len() != dim) {
        return Err(EmbeddingError::Shape {
            got: vectors.len(),
            dim: vectors.first().map_or(0, Vec::len),
            expected_count: count,
            expected_dim: dim,
        });
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    Ok(())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct HashingBackend {
    dimension: usize,
}

impl HashingBackend {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashingBackend { dimension }
    }

    fn add(&self, v: &mut [f64], feature: &str, weight: f64) {
        let h = fnv1a(feature.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % self.dimension as u64) as usize] += sign * weight;
    }

    pub fn embed_one(&self, raw: &str) -> Vec<f64> {
        let words = text::words(raw);
        let mut v = vec![0.0; self.dimension];
        for w in &words {
            self.add(&mut v, w, 1.0);
        }
        for pair in words.windows(2) {
            self.add(&mut v, &format!("{} {}", pair[0], pair[1]), 0.5);
        }
        v
    }
}

impl EmbeddingBackend for HashingBackend {
    fn name(&self) -> &str {
        "hashing"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddingHeader {
    backend: String,
    dimension: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddingRecord {
    text: String,
    vector: Vec<f64>,
}

/// Vectors looked up by exact text.
#[derive(Debug, Clone)]
pub struct PrecomputedBackend {
    name: String,
    dimension: usize,
    table: HashMap<String, Vec<f64>>,
}

impl PrecomputedBackend {
    pub fn from_entries(
        name: impl Into<String>,
        dimension: usize,
        entries: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self, EmbeddingError> {
        let table: HashMap<_, _> = entries.into_iter().collect();
        let vectors: Vec<Vec<f64>> = table.values().cloned().collect();
        check_shape(&vectors, vectors.len(), dimension)?;
        Ok(PrecomputedBackend { name: name.into(), dimension, table })
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let err = |line: usize, message: String| EmbeddingError::File { path: path.display().to_string(), line, message };
        let file = File::open(path).map_err(|e| err(0, e.to_string()))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header: EmbeddingHeader = match lines.next() {
            Some((_, Ok(l))) => serde_json::from_str(&l).map_err(|e| err(1, format!("header: {e}")))?,
            Some((_, Err(e))) => return Err(err(1, e.to_string())),
            None => return Err(err(1, "missing header".into())),
        };
        let mut table = HashMap::new();
        for (i, line) in lines {
            let line = line.map_err(|e| err(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| err(i + 1, e.to_string()))?;
            if rec.vector.len() != header.dimension {
                return Err(err(i + 1, format!("vector has dimension {}, header says {}", rec.vector.len(), header.dimension)));
            }
            if rec.vector.iter().any(|x| !x.is_finite()) {
                return Err(err(i + 1, "non-finite value".into()));
            }
            table.insert(rec.text, rec.vector);
        }
        Ok(PrecomputedBackend { name: header.backend, dimension: header.dimension, table })
    }

    /// Writes `texts` embedded by `backend` in the precomputed-file format.
    pub fn export<'a>(
        backend: &dyn EmbeddingBackend,
        texts: impl IntoIterator<Item = &'a str>,
        out: &mut impl Write,
    ) -> Result<usize, EmbeddingError> {
        let io = |e: std::io::Error| EmbeddingError::File { path: "<output>".into(), line: 0, message: e.to_string() };
        let header = EmbeddingHeader { backend: backend.name().into(), dimension: backend.dimension() };
        writeln!(out, "{}", serde_json::to_string(&header).unwrap()).map_err(io)?;
        let texts: Vec<&str> = texts.into_iter().collect();
        let mut written = 0;
        for chunk in texts.chunks(256) {
            let vectors = backend.embed(chunk)?;
            check_shape(&vectors, chunk.len(), backend.dimension())?;
            for (t, v) in chunk.iter().zip(vectors) {
                let rec = EmbeddingRecord { text: (*t).into(), vector: v };
                writeln!(out, "{}", serde_json::to_string(&rec).unwrap()).map_err(io)?;
                written += 1;
            }
        }
        Ok(written)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingBackend for PrecomputedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        texts
            .iter()
            .map(|t| self.table.get(*t).cloned().ok_or_else(|| EmbeddingError::UnknownText((*t).into())))
            .collect()
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// External embedding process reached over HTTP.
#[derive(Debug)]
pub struct HttpBackend {
    url: String,
    name: String,
    dimension: usize,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, name: impl Into<String>, dimension: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpBackend { url: url.into(), name: name.into(), dimension, agent }
    }
}

impl EmbeddingBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let response: EmbedResponse = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { texts })
            .map_err(|e| EmbeddingError::Remote(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| EmbeddingError::Remote(e.to_string()))?;
        check_shape(&response.vectors, texts.len(), self.dimension)?;
        Ok(response.vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;
    use std::net::TcpListener;

    #[test]
    fn hashing_backend_is_deterministic_and_sized() {
        let b = HashingBackend::new(32);
        let a = b.embed(&["You should watch @12"]).unwrap();
        let c = b.embed(&["You should watch @12"]).unwrap();
        assert_eq!(a, c);
        assert_eq!(a[0].len(), 32);
        assert!(cosine(&a[0], &b.embed_one("you SHOULD watch @99")) > 0.999);
        assert_eq!(cosine(&b.embed_one(""), &a[0]), 0.0);
    }

    #[test]
    fn precomputed_round_trip_and_unknown_text() {
        let hashing = HashingBackend::new(8);
        let mut buf = Vec::new();
        let n = PrecomputedBackend::export(&hashing, ["a b c", "hello"], &mut buf).unwrap();
        assert_eq!(n, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        std::fs::write(&path, &buf).unwrap();
        let back = PrecomputedBackend::load(&path).unwrap();
        assert_eq!(back.name(), "hashing");
        assert_eq!(back.dimension(), 8);
        assert_eq!(back.embed(&["hello"]).unwrap()[0], hashing.embed_one("hello"));
        assert!(matches!(back.embed(&["missing"]), Err(EmbeddingError::UnknownText(_))));
    }

    #[test]
    fn precomputed_rejects_wrong_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        std::fs::write(&path, "{\"backend\":\"x\",\"dimension\":2}\n{\"text\":\"a\",\"vector\":[1,2,3]}\n").unwrap();
        assert!(matches!(PrecomputedBackend::load(&path), Err(EmbeddingError::File { line: 2, .. })));
    }

    fn one_shot_server(body: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let mut req = Vec::new();
            loop {
                let n = stream.read(&mut buf).unwrap();
                req.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&req).into_owned();
                if let Some(head_end) = text.find("\r\n\r\n") {
                    let len = text[..head_end]
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if req.len() >= head_end + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            assert!(String::from_utf8_lossy(&req).contains("\"texts\""));
            let resp = format!("HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}", body.len(), body);
            stream.write_all(resp.as_bytes()).unwrap();
        });
        format!("http://{addr}/embed")
    }

    #[test]
    fn http_backend_speaks_the_json_contract() {
        let url = one_shot_server(r#"{"vectors": [[1.0, 0.0], [0.0, 1.0]]}"#);
        let b = HttpBackend::new(url, "remote", 2, Duration::from_secs(5));
        let v = b.embed(&["a", "b"]).unwrap();
        assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn http_backend_checks_shape() {
        let url = one_shot_server(r#"{"vectors": [[1.0, 0.0]]}"#);
        let b = HttpBackend::new(url, "remote", 2, Duration::from_secs(5));
        assert!(matches!(b.embed(&["a", "b"]), Err(EmbeddingError::Shape { .. })));
    }
}
