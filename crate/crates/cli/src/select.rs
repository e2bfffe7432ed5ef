use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use strata_core::config::Config;
use strata_core::geom::V2;
use strata_core::sl2::Mat2;
use strata_core::surface::{
    self, build_lshape, build_origami, build_regular_octagon, build_square_torus,
    TranslationSurface,
};

/// Where the input surface comes from: a named builder or a JSON file.
#[derive(Args, Debug)]
pub struct SurfaceSel {
    /// Built-in surface: `torus`, `torus:unmarked`, `lshape:A,B`,
    /// `octagon`, or `origami:HCYCLES,VCYCLES` (1-based digit cycles,
    /// dot-separated, e.g. `origami:12,13`).
    #[arg(long, conflicts_with = "surface")]
    pub builder: Option<String>,
    /// Load the surface from a JSON file instead.
    #[arg(long)]
    pub surface: Option<PathBuf>,
    /// Rescale to unit area before running.
    #[arg(long)]
    pub normalize: bool,
}

impl SurfaceSel {
    pub fn load(&self) -> anyhow::Result<TranslationSurface> {
        let s = match (&self.builder, &self.surface) {
            (Some(b), None) => parse_builder(b)?,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                surface::from_json(&text)?
            }
            _ => bail!("exactly one of --builder or --surface is required"),
        };
        Ok(if self.normalize {
            surface::normalize_area(&s)?
        } else {
            s
        })
    }

    /// Load and validate against the active config (callers that feed the
    /// surface into flows want the early structural check).
    pub fn load_checked(&self, _cfg: &Config) -> anyhow::Result<TranslationSurface> {
        let s = self.load()?;
        surface::validate(&s)?;
        Ok(s)
    }
}

pub fn parse_builder(spec: &str) -> anyhow::Result<TranslationSurface> {
    let (name, params) = match spec.split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (spec, None),
    };
    Ok(match (name, params) {
        ("torus", None) => build_square_torus(true),
        ("torus", Some("unmarked")) => build_square_torus(false),
        ("octagon", None) => build_regular_octagon(),
        ("lshape", Some(p)) => {
            let (a, b) = parse_pair(p).context("lshape takes `--builder lshape:A,B`")?;
            build_lshape(a, b)?
        }
        ("origami", Some(p)) => {
            let Some((h, v)) = p.split_once(',') else {
                bail!("origami takes `--builder origami:HCYCLES,VCYCLES`");
            };
            let (hp, vp) = parse_origami_cycles(h, v)?;
            build_origami(&hp, &vp)?
        }
        _ => bail!(
            "unknown builder `{spec}` (expected torus, torus:unmarked, lshape:A,B, octagon, \
             or origami:HCYCLES,VCYCLES)"
        ),
    })
}

/// Cycles are written as strings of 1-based square digits, several cycles
/// separated by dots: `12.3` is the transposition of squares 1 and 2 with
/// square 3 fixed. Squares not mentioned anywhere are fixed by both
/// permutations.
fn parse_origami_cycles(h: &str, v: &str) -> anyhow::Result<(Vec<usize>, Vec<usize>)> {
    let digits = |s: &str| -> anyhow::Result<Vec<Vec<usize>>> {
        s.split('.')
            .filter(|c| !c.is_empty())
            .map(|cycle| {
                cycle
                    .chars()
                    .map(|ch| {
                        ch.to_digit(10)
                            .filter(|&d| d >= 1)
                            .map(|d| d as usize - 1)
                            .ok_or_else(|| {
                                anyhow::anyhow!("cycle `{cycle}` must use digits 1-9")
                            })
                    })
                    .collect()
            })
            .collect()
    };
    let (hc, vc) = (digits(h)?, digits(v)?);
    let n = hc
        .iter()
        .chain(vc.iter())
        .flatten()
        .copied()
        .max()
        .map(|m| m + 1)
        .unwrap_or(0);
    if n == 0 {
        bail!("origami permutations mention no squares");
    }
    let perm = |cycles: &[Vec<usize>]| -> anyhow::Result<Vec<usize>> {
        let mut p: Vec<usize> = (0..n).collect();
        for cycle in cycles {
            for (k, &a) in cycle.iter().enumerate() {
                let b = cycle[(k + 1) % cycle.len()];
                if p[a] != a {
                    bail!("square {} appears in two cycles", a + 1);
                }
                p[a] = b;
            }
        }
        Ok(p)
    };
    Ok((perm(&hc)?, perm(&vc)?))
}

pub fn parse_pair(s: &str) -> anyhow::Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        bail!("expected two comma-separated numbers, got `{s}`");
    }
    Ok((parts[0].trim().parse()?, parts[1].trim().parse()?))
}

pub fn parse_direction(s: &str) -> anyhow::Result<V2> {
    let (x, y) = parse_pair(s)?;
    if x == 0.0 && y == 0.0 {
        bail!("direction must be nonzero");
    }
    Ok([x, y])
}

/// Row-major `a,b,c,d`.
pub fn parse_matrix(s: &str) -> anyhow::Result<Mat2> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("matrix `{s}` must be four comma-separated numbers"))?;
    if parts.len() != 4 {
        bail!("matrix `{s}` must have exactly four entries (row-major)");
    }
    Ok(Mat2::new(parts[0], parts[1], parts[2], parts[3]))
}

/// Semicolon-separated direction list: `1,0;0,1`.
pub fn parse_directions(s: &str) -> anyhow::Result<Vec<V2>> {
    s.split(';').map(parse_direction).collect()
}

/// One (lower, diagonal, upper) grid shape: `3,3,9`.
pub fn parse_grid(s: &str) -> anyhow::Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("grid `{s}` must be three comma-separated counts"))?;
    if parts.len() != 3 {
        bail!("grid `{s}` must have exactly three counts");
    }
    Ok((parts[0], parts[1], parts[2]))
}
