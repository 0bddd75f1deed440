//! Deterministic synthetic world for demos and tests: a movie catalog, a
//! MovieLens-style rating table and recommendation dialogs in the ReDial
//! format (`@<id>` mentions, seeker/recommender turns).

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{Genre, IdMapping, ItemCatalog, Movie, MovieId};
use crate::config::PipelineConfig;
use crate::corpus::{Corpus, DialogRecord, Speaker, UtteranceRecord};
use crate::embedding::HashingBackend;
use crate::latent::{self, Rating};
use crate::pipeline::{Pipeline, PipelineError, PipelineParts};
use crate::text::{MentionId, Preprocessor};

/// Offset between dialog mention ids and catalog ids, so the mapping is exercised.
pub const MENTION_OFFSET: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub dialogs: usize,
    pub movies: usize,
    pub users: usize,
    pub ratings_per_user: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec { dialogs: 600, movies: 160, users: 400, ratings_per_user: 40, seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub dialogs: Vec<DialogRecord>,
    pub catalog: ItemCatalog,
    pub ratings: Vec<Rating>,
    pub mapping: Vec<(MentionId, MovieId)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldPaths {
    pub corpus: PathBuf,
    pub catalog: PathBuf,
    pub ratings: PathBuf,
    pub mapping: PathBuf,
}

const GENRE_POOL: [(&str, f64); 14] = [
    ("drama", 5.0),
    ("comedy", 5.0),
    ("horror", 3.0),
    ("thriller", 3.0),
    ("action", 4.0),
    ("romance", 3.0),
    ("sci-fi", 2.5),
    ("animation", 1.5),
    ("adventure", 2.5),
    ("crime", 2.0),
    ("mystery", 1.5),
    ("fantasy", 1.5),
    ("children", 1.0),
    ("documentary", 0.5),
];

/// How dialog participants refer to a genre.
fn genre_words(genre: &str) -> &'static [&'static str] {
    match genre {
        "drama" => &["drama", "dramatic"],
        "comedy" => &["comedy", "funny"],
        "horror" => &["horror", "scary"],
        "thriller" => &["thriller", "suspenseful"],
        "action" => &["action"],
        "romance" => &["romance", "romantic"],
        "sci-fi" => &["sci-fi", "science fiction"],
        "animation" => &["animated", "animation"],
        "adventure" => &["adventure"],
        "crime" => &["crime", "gritty"],
        "mystery" => &["mystery", "mysterious"],
        "fantasy" => &["fantasy", "magical"],
        "children" => &["family", "kids"],
        _ => &["documentary"],
    }
}

const TITLE_ADJ: [&str; 24] = [
    "Silent", "Broken", "Golden", "Last", "Hidden", "Crimson", "Endless", "Midnight", "Wild", "Frozen", "Lost", "Bright",
    "Dark", "Quiet", "Burning", "Hollow", "Savage", "Gentle", "Electric", "Secret", "Distant", "Restless", "Iron", "Paper",
];
const TITLE_NOUN: [&str; 24] = [
    "Harbor", "Frontier", "Garden", "Signal", "Empire", "River", "Station", "Kingdom", "Mirror", "Summer", "Horizon",
    "Shadow", "Island", "Circuit", "Orchard", "Canyon", "Letter", "Voyage", "Engine", "Lantern", "Storm", "Valley",
    "Castle", "Bridge",
];
const FIRST: [&str; 16] = [
    "Anna", "Marcus", "Lena", "Victor", "Priya", "Tom", "Grace", "Hugo", "Maya", "Daniel", "Rosa", "Kenji", "Clara", "Omar",
    "Ingrid", "Felix",
];
const LAST: [&str; 12] = ["Hart", "Moreno", "Lind", "Okafor", "Sato", "Keller", "Brandt", "Quinn", "Novak", "Reyes", "Dale", "Marsh"];
const PLOT_WHO: [&str; 8] =
    ["a retired detective", "two estranged sisters", "a young pilot", "a small-town teacher", "a reluctant heir", "an android", "a band of thieves", "a grieving father"];
const PLOT_WHAT: [&str; 8] = [
    "must find a missing child",
    "search for a lost treasure",
    "try to escape a haunted house",
    "fall in love during a storm",
    "uncover a conspiracy",
    "travel across a dying planet",
    "plan one last heist",
    "rebuild a family farm",
];

fn sample_genres(rng: &mut ChaCha8Rng) -> BTreeSet<Genre> {
    let weights = WeightedIndex::new(GENRE_POOL.iter().map(|(_, w)| *w)).unwrap();
    let count = [1, 1, 2, 2, 2, 3][rng.random_range(0..6)];
    let mut out = BTreeSet::new();
    while out.len() < count {
        out.insert(Genre::parse(GENRE_POOL[weights.sample(rng)].0).unwrap());
    }
    out
}

fn build_movies(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Vec<Movie> {
    let mut titles = HashSet::new();
    let mut movies = Vec::with_capacity(spec.movies);
    for i in 0..spec.movies {
        let year = rng.random_range(1965..=2020);
        let mut base = format!("{} {}", TITLE_ADJ.choose(rng).unwrap(), TITLE_NOUN.choose(rng).unwrap());
        while !titles.insert(base.clone()) {
            base.push_str(" II");
        }
        let title = if rng.random_bool(0.2) { format!("{base}, The ({year})") } else { format!("{base} ({year})") };
        let actors = (0..rng.random_range(2..=3))
            .map(|_| format!("{} {}", FIRST.choose(rng).unwrap(), LAST.choose(rng).unwrap()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let plot = rng.random_bool(0.85).then(|| {
            let who = PLOT_WHO.choose(rng).unwrap();
            let what = PLOT_WHAT.choose(rng).unwrap();
            let mut s = format!("{who} {what}.");
            s[..1].make_ascii_uppercase();
            s
        });
        movies.push(Movie {
            movie_id: MovieId(i as u32 + 1),
            title,
            genres: sample_genres(rng),
            actors,
            year: Some(year),
            mean_rating: 0.0,
            rating_count: 0,
            plot_summary: plot,
        });
    }
    movies
}

fn build_ratings(spec: &WorldSpec, movies: &[Movie], rng: &mut ChaCha8Rng) -> Vec<Rating> {
    let quality: Vec<f64> = {
        let n = Normal::new(3.4, 0.5).unwrap();
        movies.iter().map(|_| n.sample(rng)).collect()
    };
    let popularity = WeightedIndex::new(movies.iter().map(|_| LogNormal::new(0.0, 0.8).unwrap().sample(rng))).unwrap();
    let noise = Normal::new(0.0, 0.6).unwrap();
    let mut ratings = Vec::with_capacity(spec.users * spec.ratings_per_user);
    for user in 1..=spec.users as u32 {
        let liked: BTreeSet<Genre> = sample_genres(rng);
        let mut seen = HashSet::new();
        let mut attempts = 0;
        while seen.len() < spec.ratings_per_user.min(movies.len()) && attempts < spec.ratings_per_user * 20 {
            attempts += 1;
            let i = popularity.sample(rng);
            let m = &movies[i];
            // users mostly pick movies of genres they like
            if m.genres.is_disjoint(&liked) && rng.random_bool(0.6) {
                continue;
            }
            if !seen.insert(i) {
                continue;
            }
            let affinity = if m.genres.is_disjoint(&liked) { -0.4 } else { 0.7 };
            let raw = quality[i] + affinity + noise.sample(rng);
            let rating = ((raw.clamp(0.5, 5.0) * 2.0).round() / 2.0) as f32;
            ratings.push(Rating { user, movie: m.movie_id.0, rating });
        }
    }
    ratings
}

struct DialogWriter<'a> {
    rng: &'a mut ChaCha8Rng,
    turns: Vec<UtteranceRecord>,
}

impl DialogWriter<'_> {
    fn say(&mut self, speaker: Speaker, options: &[String]) {
        let text = options.choose(self.rng).unwrap().clone();
        self.turns.push(UtteranceRecord { speaker, text });
    }
}

fn mention(m: &Movie) -> String {
    format!("@{}", m.movie_id.0 as u64 + MENTION_OFFSET)
}

fn owned(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| (*s).to_owned()).collect()
}

fn build_dialog(id: usize, movies: &[Movie], rng: &mut ChaCha8Rng) -> DialogRecord {
    let genre = GENRE_POOL[WeightedIndex::new(GENRE_POOL.iter().map(|(_, w)| *w)).unwrap().sample(rng)].0;
    let g = Genre::parse(genre).unwrap();
    let word = *genre_words(genre).choose(rng).unwrap();
    let pool: Vec<&Movie> = movies.iter().filter(|m| m.genres.contains(&g)).collect();
    let pool = if pool.len() >= 4 { pool } else { movies.iter().collect() };
    let mut picks: Vec<&Movie> = pool.choose_multiple(rng, 4).copied().collect();
    picks.sort_by_key(|_| rng.random::<u32>());
    let (liked, recs) = (picks[0], &picks[1..]);

    let mut w = DialogWriter { rng, turns: Vec::new() };
    if w.rng.random_bool(0.3) {
        w.say(Speaker::Recommender, &owned(&["hi there!", "hello! what kind of movies do you like?", "hey, how are you today?"]));
    }
    w.say(
        Speaker::Seeker,
        &owned(&["hi", "hello there", "hey, how are you?", "hi! i am looking for a movie to watch tonight", "hello, can you help me find a movie?"]),
    );
    w.say(
        Speaker::Recommender,
        &owned(&[
            "hi! what kind of movies do you like?",
            "hello, what genre are you in the mood for?",
            "hey there! what do you like to watch?",
            "sure, what sort of movies do you usually enjoy?",
        ]),
    );
    w.say(
        Speaker::Seeker,
        &[
            format!("i like {word} movies"),
            format!("i love {word} movies like {}", mention(liked)),
            format!("something {word} would be great"),
            format!("i really enjoyed {}", mention(liked)),
            format!("i am in the mood for a good {word} movie"),
            format!("i usually watch {word} films, my favorite is {}", mention(liked)),
        ],
    );
    let rounds = w.rng.random_range(1..=3);
    for (r, rec) in recs.iter().take(rounds).enumerate() {
        w.say(
            Speaker::Recommender,
            &[
                format!("have you seen {} ?", mention(rec)),
                format!("you should check out {}", mention(rec)),
                format!("if you liked {} you will love {}", mention(liked), mention(rec)),
                format!("{} is a really good {word} movie", mention(rec)),
                format!("how about {} ? it is great", mention(rec)),
                format!("i would recommend {} , it is one of the best {word} movies i have seen", mention(rec)),
            ],
        );
        if w.rng.random_bool(0.15) {
            w.say(Speaker::Recommender, &owned(&["it is one of my favorites", "i watched it last week", "the ending is amazing"]));
        }
        w.say(
            Speaker::Seeker,
            &owned(&[
                "no i have not seen that one",
                "yes i saw it, it was great",
                "what is it about?",
                "oh i have seen it, anything else?",
                "that sounds good",
                "i have heard of it but never watched it",
            ]),
        );
        let plot = rec.plot_summary.clone().unwrap_or_else(|| "a lot of twists".into()).to_lowercase();
        let plot = plot.trim_end_matches('.');
        let next = recs.get(r + 1).copied().unwrap_or(liked);
        w.say(
            Speaker::Recommender,
            &[
                format!("it is about {plot}"),
                format!("you might also like {}", mention(next)),
                "great, i think you will like it".into(),
                format!("it is a fun {word} movie with a great cast"),
                "it has a really good story".into(),
            ],
        );
        if r + 1 < rounds {
            w.say(Speaker::Seeker, &owned(&["any other suggestions?", "what else would you recommend?", "ok, anything similar?"]));
        }
    }
    w.say(
        Speaker::Seeker,
        &owned(&["thanks for the suggestions!", "thank you, bye", "great, thanks so much", "ok i will watch it, thanks", "thanks! have a good night"]),
    );
    w.say(
        Speaker::Recommender,
        &owned(&["you are welcome, enjoy!", "no problem, have a great night!", "enjoy the movie!", "bye!", "you are welcome, have a nice day"]),
    );
    DialogRecord { dialog_id: format!("d{id:05}"), utterances: w.turns, split: None }
}

impl World {
    pub fn generate(spec: &WorldSpec) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut movies = build_movies(spec, &mut rng);
        let ratings = build_ratings(spec, &movies, &mut rng);
        let stats = latent::rating_stats(&ratings);
        for m in &mut movies {
            if let Some(&(mean, count)) = stats.get(&m.movie_id) {
                m.mean_rating = mean;
                m.rating_count = count;
            }
        }
        let dialogs = (0..spec.dialogs).map(|i| build_dialog(i, &movies, &mut rng)).collect();
        let mapping = movies.iter().map(|m| (MentionId(m.movie_id.0 as u64 + MENTION_OFFSET), m.movie_id)).collect();
        World { dialogs, catalog: ItemCatalog::new(movies), ratings, mapping }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<WorldPaths> {
        std::fs::create_dir_all(dir)?;
        let paths = WorldPaths {
            corpus: dir.join("dialogs.jsonl"),
            catalog: dir.join("catalog.csv"),
            ratings: dir.join("ratings.csv"),
            mapping: dir.join("mapping.csv"),
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(&paths.corpus)?);
        for d in &self.dialogs {
            writeln!(out, "{}", serde_json::to_string(d)?)?;
        }
        out.flush()?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(&paths.ratings)?);
        writeln!(out, "userId,movieId,rating,timestamp")?;
        for (i, r) in self.ratings.iter().enumerate() {
            writeln!(out, "{},{},{:.1},{}", r.user, r.movie, r.rating, 1_100_000_000 + i as u64)?;
        }
        out.flush()?;
        let other = |e: crate::catalog::CatalogError| std::io::Error::other(e.to_string());
        self.catalog.save(&paths.catalog).map_err(other)?;
        IdMapping::save(&self.mapping, &paths.mapping).map_err(other)?;
        Ok(paths)
    }

    /// In-memory pipeline over this world, using `config` for parameters only.
    pub fn pipeline(&self, config: PipelineConfig) -> Result<Pipeline, PipelineError> {
        let corpus = Corpus::from_records(self.dialogs.clone(), config.split(), &Preprocessor::default())?;
        let space = latent::factorize(&self.ratings, config.latent_factors, config.seed)?;
        let backend = Arc::new(HashingBackend::new(config.embedding.dimension));
        let mut parts = PipelineParts::from_corpus(corpus, self.catalog.clone(), space, backend)?;
        parts.mapping = IdMapping::from_pairs(self.mapping.iter().copied());
        Pipeline::from_parts(parts, config)
    }
}

/// Config pointing at files written by [`World::write`].
pub fn config_for(paths: &WorldPaths) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.paths.corpus = Some(paths.corpus.clone());
    c.paths.catalog = Some(paths.catalog.clone());
    c.paths.ratings = Some(paths.ratings.clone());
    c.paths.mapping = Some(paths.mapping.clone());
    c
}
