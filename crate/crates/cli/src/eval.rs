use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Subcommand;

use retrocrs_core::config::PipelineConfig;
use retrocrs_core::eval::{
    aggregate_scores, annotation_sheet, generate_responses, read_situations, sample_situations, write_sheet, write_situations,
    write_timings, ResponseTable, ScoreSheet,
};

use crate::{assemble, create, load_corpus};

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Sample dialog situations from the test split.
    Sample {
        #[arg(long, default_value_t = 70)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one response per situation.
    Generate {
        #[arg(long)]
        situations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-situation latency CSV.
        #[arg(long)]
        timings: Option<PathBuf>,
        /// System name written to the table.
        #[arg(long, default_value = "retrocrs")]
        system: String,
    },
    /// Build a shuffled annotation sheet from one or more response tables.
    Sheet {
        #[arg(long)]
        situations: PathBuf,
        /// Response tables to merge; later tables win on duplicate rows.
        #[arg(long = "responses", required = true)]
        responses: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Insert one attention-check row asking for this rating.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        attention_rating: Option<u8>,
    },
    /// Mean and standard deviation of ratings per system.
    Aggregate {
        /// Scored sheets; rows are pooled.
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

pub fn run(cmd: EvalCommand, config: PipelineConfig) -> Result<()> {
    match cmd {
        EvalCommand::Sample { count, out } => {
            let corpus = load_corpus(&config)?;
            let situations = sample_situations(corpus.test(), count, config.seed)?;
            let mut w = create(&out)?;
            write_situations(&situations, &mut w)?;
            w.flush()?;
            println!("{} situations -> {}", situations.len(), out.display());
            Ok(())
        }
        EvalCommand::Generate { situations, out, timings, system } => {
            let situations = read_situations(&situations)?;
            let pipeline = assemble(config)?;
            let generated = generate_responses(&situations, &pipeline, &pipeline.default_params(), &system);
            generated.table.write_csv(create(&out)?)?;
            if let Some(path) = timings {
                write_timings(&generated.timings, create(&path)?)?;
            }
            let fallbacks = generated.table.rows.iter().filter(|r| r.fallback).count();
            println!("{} responses ({fallbacks} fallback) -> {}", generated.table.rows.len(), out.display());
            Ok(())
        }
        EvalCommand::Sheet { situations, responses, out, attention_rating } => {
            let situations = read_situations(&situations)?;
            let mut table = ResponseTable::default();
            for path in &responses {
                table = table.merge(&ResponseTable::read_csv(path)?);
            }
            let rows = annotation_sheet(&situations, &table, config.seed, attention_rating);
            let mut w = create(&out)?;
            write_sheet(&rows, &mut w)?;
            w.flush()?;
            println!("{} rows for systems {} -> {}", rows.len(), table.systems().join(", "), out.display());
            Ok(())
        }
        EvalCommand::Aggregate { scores, json } => {
            let mut sheet = ScoreSheet::default();
            for path in &scores {
                let (part, rejected) = ScoreSheet::load(path)?;
                for r in &rejected {
                    eprintln!("warning: {} line {}: {}", path.display(), r.line, r.reason);
                }
                sheet.rows.extend(part.rows);
                if sheet.anchors.is_empty() {
                    sheet.anchors = part.anchors;
                }
            }
            if sheet.rows.is_empty() {
                bail!("no valid ratings in {} sheet(s)", scores.len());
            }
            let result = aggregate_scores(&sheet)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&result)?);
                return Ok(());
            }
            println!("{:<12} {:>6} {:>6} {:>6}   {:>5} {:>5} {:>5} {:>5} {:>5}", "system", "n", "mean", "sd", 1, 2, 3, 4, 5);
            for s in &result {
                let h = s.histogram;
                println!(
                    "{:<12} {:>6} {:>6.2} {:>6.2}   {:>5} {:>5} {:>5} {:>5} {:>5}",
                    s.system, s.ratings, s.mean, s.sd, h[0], h[1], h[2], h[3], h[4]
                );
            }
            Ok(())
        }
    }
}
