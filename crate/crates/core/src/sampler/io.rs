use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use super::{ChainState, PosteriorSample, TraceRow};
use crate::error::{Result, TgpError};
use crate::leaf_gp::LeafParams;
use crate::tree::serialize::{fmt_f64, fmt_vec, from_text, parse_f64, parse_vec, to_text};
use crate::tree::Tree;

const SAMPLES_HEADER: &str = "# tgp samples v1";
const CHECKPOINT_HEADER: &str = "tgp-checkpoint v1";

fn fmt_matrix(w: &DMatrix<f64>) -> String {
    let rows: Vec<f64> = (0..w.nrows())
        .flat_map(|i| (0..w.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| w[(i, j)])
        .collect();
    format!("{}x{}:{}", w.nrows(), w.ncols(), fmt_vec(&rows))
}

fn parse_matrix(s: &str) -> Result<DMatrix<f64>> {
    let bad = || TgpError::Parse(format!("bad matrix `{s}`"));
    let (shape, body) = s.split_once(':').ok_or_else(bad)?;
    let (r, c) = shape.split_once('x').ok_or_else(bad)?;
    let r: usize = r.parse().map_err(|_| bad())?;
    let c: usize = c.parse().map_err(|_| bad())?;
    let v = parse_vec(body)?;
    if v.len() != r * c {
        return Err(bad());
    }
    Ok(DMatrix::from_row_slice(r, c, &v))
}

fn key_values(line: &str) -> HashMap<&str, &str> {
    line.split_whitespace()
        .filter_map(|w| w.split_once('='))
        .collect()
}

fn get<'a>(kv: &HashMap<&str, &'a str>, key: &str) -> Result<&'a str> {
    kv.get(key)
        .copied()
        .ok_or_else(|| TgpError::Parse(format!("missing `{key}`")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| TgpError::Parse(format!("not a count: `{s}`")))
}

fn prefixed<'a>(line: Option<&'a str>, prefix: &str) -> Result<&'a str> {
    line.and_then(|l| l.strip_prefix(prefix))
        .ok_or_else(|| TgpError::Parse(format!("expected a line starting with `{prefix}`")))
}

/// Text form of a list of samples; byte-identical for identical input.
pub fn write_samples(samples: &[PosteriorSample]) -> String {
    let mut out = String::from(SAMPLES_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&format!(
            "sample chain={} round={} leaves={} log_posterior={}\n",
            s.chain,
            s.round,
            s.num_leaves(),
            fmt_f64(s.log_posterior)
        ));
        out.push_str(&format!("beta0={}\n", fmt_vec(s.beta0.as_slice())));
        out.push_str(&format!("w={}\n", fmt_matrix(&s.w)));
        out.push_str(&to_text(&s.tree));
        out.push_str("end\n");
    }
    out
}

/// Inverse of [`write_samples`]. Leaf rows are left empty.
pub fn parse_samples(text: &str) -> Result<Vec<PosteriorSample>> {
    let mut lines = text.lines();
    if lines.next() != Some(SAMPLES_HEADER) {
        return Err(TgpError::Parse("not a samples file".into()));
    }
    let mut out = Vec::new();
    while let Some(head) = lines.next() {
        if head.trim().is_empty() {
            continue;
        }
        let kv = key_values(prefixed(Some(head), "sample ")?);
        let chain = parse_usize(get(&kv, "chain")?)?;
        let round = parse_usize(get(&kv, "round")?)?;
        let log_posterior = parse_f64(get(&kv, "log_posterior")?)?;
        let beta0 = DVector::from_vec(parse_vec(prefixed(lines.next(), "beta0=")?)?);
        let w = parse_matrix(prefixed(lines.next(), "w=")?)?;
        let mut tree_text = String::new();
        loop {
            match lines.next() {
                Some("end") => break,
                Some(l) => {
                    tree_text.push_str(l);
                    tree_text.push('\n');
                }
                None => return Err(TgpError::Parse("unterminated sample".into())),
            }
        }
        let tree: Tree<LeafParams> = from_text(&tree_text)?;
        out.push(PosteriorSample {
            chain,
            round,
            tree,
            beta0,
            w,
            log_posterior,
        });
    }
    Ok(out)
}

/// CSV with columns round, chain, leaves, log_posterior.
pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| TgpError::Parse(format!("writing trace: {e}"));
    w.write_record(["round", "chain", "leaves", "log_posterior"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.chain.to_string(),
            r.leaves.to_string(),
            format!("{}", r.log_posterior),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| TgpError::Parse(format!("writing trace: {e}")))?;
    Ok(())
}

/// Chain state as stored on disk. The tree holds parameters only; rows are
/// re-derived from the data on resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub chain: usize,
    pub round: usize,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub beta0: DVector<f64>,
    pub w: DMatrix<f64>,
    pub tree: Tree<LeafParams>,
}

impl Checkpoint {
    pub fn of(state: &ChainState) -> Self {
        Checkpoint {
            chain: state.chain,
            round: state.round,
            rng_seed: state.rng.get_seed(),
            rng_stream: state.rng.get_stream(),
            rng_word_pos: state.rng.get_word_pos(),
            beta0: state.hyper.beta0.clone(),
            w: state.hyper.w.clone(),
            tree: state.tree.map(|l| l.params.clone()),
        }
    }

    pub fn to_text(&self) -> String {
        let seed: String = self.rng_seed.iter().map(|b| format!("{b:02x}")).collect();
        format!(
            "{CHECKPOINT_HEADER}\nchain={}\nround={}\nrng_seed={seed}\nrng_stream={}\nrng_word_pos={}\nbeta0={}\nw={}\ntree\n{}",
            self.chain,
            self.round,
            self.rng_stream,
            self.rng_word_pos,
            fmt_vec(self.beta0.as_slice()),
            fmt_matrix(&self.w),
            to_text(&self.tree)
        )
    }
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_HEADER) {
        return Err(TgpError::Parse("not a checkpoint (bad header)".into()));
    }
    let chain = parse_usize(prefixed(lines.next(), "chain=")?)?;
    let round = parse_usize(prefixed(lines.next(), "round=")?)?;
    let hex = prefixed(lines.next(), "rng_seed=")?;
    if hex.len() != 64 {
        return Err(TgpError::Parse("rng seed must be 64 hex digits".into()));
    }
    let mut rng_seed = [0u8; 32];
    for (i, b) in rng_seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|_| TgpError::Parse("bad rng seed".into()))?;
    }
    let rng_stream = prefixed(lines.next(), "rng_stream=")?
        .parse()
        .map_err(|_| TgpError::Parse("bad rng stream".into()))?;
    let rng_word_pos = prefixed(lines.next(), "rng_word_pos=")?
        .parse()
        .map_err(|_| TgpError::Parse("bad rng position".into()))?;
    let beta0 = DVector::from_vec(parse_vec(prefixed(lines.next(), "beta0=")?)?);
    let w = parse_matrix(prefixed(lines.next(), "w=")?)?;
    if lines.next() != Some("tree") {
        return Err(TgpError::Parse("expected `tree`".into()));
    }
    let rest: Vec<&str> = lines.collect();
    let tree = from_text(&rest.join("\n"))?;
    Ok(Checkpoint {
        chain,
        round,
        rng_seed,
        rng_stream,
        rng_word_pos,
        beta0,
        w,
        tree,
    })
}

pub fn checkpoint_path(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain-{chain}.ckpt"))
}

/// Write the chain's checkpoint, replacing any earlier one atomically.
pub fn write_checkpoint(dir: &Path, state: &ChainState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TgpError::io(dir, e))?;
    let path = checkpoint_path(dir, state.chain);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, Checkpoint::of(state).to_text()).map_err(|e| TgpError::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| TgpError::io(&path, e))
}
