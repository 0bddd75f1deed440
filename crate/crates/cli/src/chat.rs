use std::io::{BufRead, IsTerminal, Write};

use anyhow::Result;

use retrocrs_core::session::{SessionOverrides, SessionStore};

const HELP: &str = ":new starts a new session, :quit exits";

pub fn repl(store: SessionStore, show_ranking: bool) -> Result<()> {
    let interactive = std::io::stdin().is_terminal();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut session = store.create(&SessionOverrides::default())?;
    if interactive {
        writeln!(out, "session {session} ({HELP})")?;
    }
    let prompt = |out: &mut std::io::StdoutLock| -> std::io::Result<()> {
        if interactive {
            write!(out, "> ")?;
            out.flush()?;
        }
        Ok(())
    };
    prompt(&mut out)?;
    for line in std::io::stdin().lock().lines() {
        let line = line?;
        let text = line.trim();
        match text {
            "" => {}
            ":quit" | ":q" => break,
            ":new" => {
                session = store.create(&SessionOverrides::default())?;
                writeln!(out, "session {session}")?;
            }
            ":help" => writeln!(out, "{HELP}")?,
            _ => {
                let reply = store.post(&session, text)?;
                let o = &reply.outcome;
                writeln!(out, "retrocrs: {}", o.response.text)?;
                let source = &o.response.provenance;
                let mut note = format!("  from {}#{}", source.dialog_id, source.turn_index);
                if let Some(m) = o.response.recommended_movie_id.and_then(|id| store.pipeline().catalog().get(id)) {
                    note.push_str(&format!(", recommends {} [{}]", m.display_title(), m.movie_id.0));
                }
                if o.fallback {
                    note.push_str(&format!(", fallback: {}", o.fallback_reason.as_deref().unwrap_or("unknown")));
                }
                writeln!(out, "{note}")?;
                if show_ranking {
                    if let Some(r) = &o.debug.ranking {
                        for c in &r.ranked {
                            writeln!(out, "    {:>8.3} {:>+3}  {}", c.final_score, c.intent_boost, c.candidate.raw_text)?;
                        }
                    }
                }
            }
        }
        prompt(&mut out)?;
    }
    Ok(())
}
