use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Subcommand;

use retrocrs_core::catalog::{match_titles, IdMapping, ItemCatalog};
use retrocrs_core::config::PipelineConfig;
use retrocrs_core::corpus::{read_redial, Split};
use retrocrs_core::latent::{rating_stats, read_ratings};
use retrocrs_core::text::MentionId;

use crate::{create, required};

#[derive(Debug, Subcommand)]
pub enum IngestCommand {
    /// Convert ReDial train/test JSONL files into one corpus file with pinned splits.
    Redial {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the item catalog from MovieLens movies.csv and the configured ratings.
    Movielens {
        #[arg(long)]
        movies: PathBuf,
        /// Optional CSV with movieId, actors and plot columns.
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match ReDial movie names (movieId,movieName,...) to catalog titles.
    Mapping {
        #[arg(long)]
        redial_movies: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cmd: IngestCommand, config: &PipelineConfig) -> Result<()> {
    match cmd {
        IngestCommand::Redial { train, test, out } => {
            if train.is_none() && test.is_none() {
                bail!("give --train, --test or both");
            }
            let mut w = create(&out)?;
            let mut total = 0;
            for (path, split) in [(train, Split::Train), (test, Split::Test)] {
                let Some(path) = path else { continue };
                let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                let records = read_redial(BufReader::new(file), Some(split))?;
                for r in &records {
                    serde_json::to_writer(&mut w, r)?;
                    w.write_all(b"\n")?;
                }
                println!("{}: {} dialogs ({split:?})", path.display(), records.len());
                total += records.len();
            }
            w.flush()?;
            println!("{total} dialogs -> {}", out.display());
            Ok(())
        }
        IngestCommand::Movielens { movies, metadata, out } => {
            let ratings = read_ratings(required(&config.paths.ratings, "ratings")?)?;
            let catalog = ItemCatalog::from_movielens(&movies, &rating_stats(&ratings), metadata.as_deref())?;
            catalog.save(&out)?;
            println!("{} movies, {} ratings -> {}", catalog.len(), ratings.len(), out.display());
            Ok(())
        }
        IngestCommand::Mapping { redial_movies, out } => {
            let catalog = ItemCatalog::load(required(&config.paths.catalog, "catalog")?)?;
            let mut reader = csv::Reader::from_path(&redial_movies).with_context(|| format!("opening {}", redial_movies.display()))?;
            let mut names = Vec::new();
            for (i, row) in reader.records().enumerate() {
                let row = row?;
                let id: u64 = row
                    .get(0)
                    .and_then(|v| v.trim().parse().ok())
                    .with_context(|| format!("{} row {}: bad movie id", redial_movies.display(), i + 2))?;
                names.push((MentionId(id), row.get(1).unwrap_or("").to_owned()));
            }
            let pairs = match_titles(names.iter().map(|(id, n)| (*id, n.as_str())), &catalog);
            IdMapping::save(&pairs, &out)?;
            println!("matched {} of {} mentioned movies -> {}", pairs.len(), names.len(), out.display());
            Ok(())
        }
    }
}
