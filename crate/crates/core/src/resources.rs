//! Versioned word lists and rule tables shipped with the crate.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub const STOP_WORDS: &str = include_str!("../resources/stopwords.txt");
pub const CHITCHAT_KEYWORDS: &str = include_str!("../resources/chitchat.txt");
pub const GENRE_KEYWORDS: &str = include_str!("../resources/genre_keywords.tsv");
pub const GENRE_FORMS: &str = include_str!("../resources/genre_forms.tsv");
pub const REWRITE_RULES: &str = include_str!("../resources/rules.tsv");

#[derive(Debug, Error)]
pub enum ResourceError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{source_name}:{line}: {message}")]
    Malformed { source_name: String, line: usize, message: String },
}

pub(crate) fn read(path: &Path) -> Result<String, ResourceError> {
    std::fs::read_to_string(path).map_err(|source| ResourceError::Io { path: path.to_owned(), source })
}

/// Non-empty, non-comment lines, trimmed.
pub(crate) fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// Tab-separated rows of non-comment lines, with 1-based line numbers.
pub(crate) fn tsv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim_end_matches(['\r', '\n']);
        if l.trim().is_empty() || l.trim_start().starts_with('#') {
            None
        } else {
            Some((i + 1, l.split('\t').map(str::trim).collect()))
        }
    })
}
