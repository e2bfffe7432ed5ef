use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use strata_core::config::Config;

/// Run metadata recorded alongside every result. `timestamp_unix` is the
/// only field that varies between identical runs; consumers that diff
/// outputs drop it first.
#[derive(Serialize, Debug)]
pub struct RunMeta {
    pub argv: Vec<String>,
    pub seed: u64,
    pub timestamp_unix: u64,
    pub output_dir: String,
    pub budgets: BTreeMap<String, u64>,
    pub constants: BTreeMap<String, f64>,
}

#[derive(Serialize, Debug)]
pub struct Envelope<T: Serialize> {
    pub schema: String,
    pub meta: RunMeta,
    pub result: T,
}

pub fn run_meta(argv: &[String], seed: u64, out_dir: &Path, cfg: &Config) -> RunMeta {
    let timestamp_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let b = &cfg.budgets;
    let budgets = BTreeMap::from([
        ("enumeration".to_string(), b.enumeration),
        ("flips".to_string(), b.flips),
        ("separatrix".to_string(), b.separatrix),
        ("degenerate_variants".to_string(), b.degenerate_variants),
        ("hyperbolic_words".to_string(), b.hyperbolic_words),
    ]);
    let c = &cfg.constants;
    let constants = BTreeMap::from([
        ("c1".to_string(), c.c1),
        ("c2".to_string(), c.c2),
        ("kappa1".to_string(), c.kappa1),
        ("kappa2".to_string(), c.kappa2),
        ("alpha".to_string(), c.alpha),
        ("kappa4".to_string(), c.kappa4),
        ("nu".to_string(), c.nu),
        ("tau_bal".to_string(), c.tau_bal),
        ("k_sheet".to_string(), c.k_sheet),
        ("k_bad".to_string(), c.k_bad),
        ("c0".to_string(), c.c0),
    ]);
    RunMeta {
        argv: argv.to_vec(),
        seed,
        timestamp_unix,
        output_dir: out_dir.display().to_string(),
        budgets,
        constants,
    }
}

/// Resolve the output directory: `--out` flag, then the `STRATA_LAB_OUT`
/// environment variable, then the working directory.
pub fn resolve_out_dir(flag: &Option<PathBuf>) -> PathBuf {
    if let Some(p) = flag {
        return p.clone();
    }
    if let Ok(env) = std::env::var("STRATA_LAB_OUT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from(".")
}

/// Serialize the envelope, write `<slug>.json` under the output directory,
/// and echo the same JSON to stdout.
pub fn write_json<T: Serialize>(
    slug: &str,
    result: T,
    argv: &[String],
    seed: u64,
    out_dir: &Path,
    cfg: &Config,
) -> anyhow::Result<()> {
    let env = Envelope {
        schema: format!("{slug}/1"),
        meta: run_meta(argv, seed, out_dir, cfg),
        result,
    };
    let text = serde_json::to_string_pretty(&env)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join(format!("{slug}.json"));
    std::fs::write(&path, format!("{text}\n"))
        .with_context(|| format!("writing {}", path.display()))?;
    println!("{text}");
    Ok(())
}

/// Write a CSV next to the JSON output. Rows are preformatted by the
/// caller; floats go through `Display`, which round-trips.
pub fn write_csv(slug: &str, header: &str, rows: &[String], out_dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join(format!("{slug}.csv"));
    let mut text = String::with_capacity(rows.len() * 48 + header.len() + 2);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
