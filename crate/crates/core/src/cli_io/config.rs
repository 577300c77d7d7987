//! Flat `key = value` run configuration.
//!
//! ```text
//! # motorcycle run
//! data = mcycle.csv
//! rounds = 20000
//! burn_in = 5000
//! thin = 10
//! family = isotropic
//! ```
//!
//! Blank lines and text after `#` are ignored. Paths are relative to the
//! directory holding the file. Every key is optional except `data`.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `data` | required | training CSV |
//! | `response` | last column | response column name |
//! | `out` | `tgp-out` | output directory |
//! | `rounds`, `burn_in`, `thin` | 10000, 2000, 10 | run length and thinning |
//! | `chains`, `seed` | 2, 0 | parallel chains and base seed |
//! | `checkpoint_every` | 1000 | rounds between checkpoints |
//! | `move_grow`, `move_prune`, `move_change`, `move_swap` | 0.2, 0.2, 0.4, 0.2 | tree move weights |
//! | `family` | `isotropic` | `isotropic` or `separable` |
//! | `power` | 2 | correlation power in (0, 2] |
//! | `n_min` | inputs + 3 | minimum rows per leaf |
//! | `corr_update` | `block` | `block`, `component` or `fixed` |
//! | `mu` | 0 | prior mean of beta0: one value or one per coefficient |
//! | `b`, `v` | 1 | prior matrices: scalar times identity, a diagonal, or a full row-major matrix |
//! | `rho` | coefficients | Wishart degrees of freedom |
//! | `alpha_sigma`, `q_sigma` | 5, 5 | inverse-gamma prior on sigma^2 |
//! | `alpha_tau`, `q_tau` | 5, 5 | inverse-gamma prior on tau^2 |
//! | `lambda_g` | 10 | exponential nugget prior rate |
//! | `tree_a`, `tree_b` | 0.5, 2 | tree split probability a (1 + depth)^-b |
//! | `workers` | 1 | concurrent fits during cross-validation |

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TgpError};
use crate::kernel::CorrFamily;
use crate::leaf_gp::{CorrUpdate, HyperParams};
use crate::sampler::{McmcConfig, ModelSpec};

const KEYS: &[&str] = &[
    "data",
    "response",
    "out",
    "rounds",
    "burn_in",
    "thin",
    "chains",
    "seed",
    "checkpoint_every",
    "move_grow",
    "move_prune",
    "move_change",
    "move_swap",
    "family",
    "power",
    "n_min",
    "corr_update",
    "mu",
    "b",
    "v",
    "rho",
    "alpha_sigma",
    "q_sigma",
    "alpha_tau",
    "q_tau",
    "lambda_g",
    "tree_a",
    "tree_b",
    "workers",
];

/// Hyperparameter values given in the file; the rest take defaults once
/// the input dimension is known.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HyperOverrides {
    pub mu: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    pub rho: Option<f64>,
    pub alpha_sigma: Option<f64>,
    pub q_sigma: Option<f64>,
    pub alpha_tau: Option<f64>,
    pub q_tau: Option<f64>,
    pub lambda_g: Option<f64>,
    pub tree_a: Option<f64>,
    pub tree_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub data: PathBuf,
    pub response: Option<String>,
    pub out: PathBuf,
    pub mcmc: McmcConfig,
    pub family: CorrFamily,
    pub power: f64,
    pub n_min: Option<usize>,
    pub corr_update: CorrUpdate,
    pub hyper: HyperOverrides,
    pub workers: usize,
}

impl FitConfig {
    /// Defaults for everything except the data path.
    pub fn new(data: impl Into<PathBuf>) -> Self {
        FitConfig {
            data: data.into(),
            response: None,
            out: PathBuf::from("tgp-out"),
            mcmc: McmcConfig::new(10_000, 2_000, 10, 2, 0),
            family: CorrFamily::Isotropic,
            power: 2.0,
            n_min: None,
            corr_update: CorrUpdate::Block,
            hyper: HyperOverrides::default(),
            workers: 1,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TgpError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses the whole file and reports every bad line at once.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut problems = Vec::new();
        let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                problems.push(format!("line {}: expected `key = value`", i + 1));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                problems.push(format!("line {}: unknown key `{k}`", i + 1));
            } else if let Some((first, _)) = entries.insert(k, (i + 1, v)) {
                problems.push(format!("line {}: `{k}` already set on line {first}", i + 1));
            }
        }
        let mut cfg = FitConfig::new(PathBuf::new());
        match entries.get("data") {
            Some((_, v)) if !v.is_empty() => cfg.data = base.join(v),
            _ => problems.push("`data` is required".into()),
        }
        if let Some((_, v)) = entries.get("response") {
            cfg.response = Some(v.to_string());
        }
        cfg.out = base.join(entries.get("out").map_or("tgp-out", |(_, v)| v));

        let mut p = Parser {
            entries: &entries,
            problems: &mut problems,
        };
        let m = &mut cfg.mcmc;
        p.set_usize("rounds", &mut m.rounds);
        p.set_usize("burn_in", &mut m.burn_in);
        p.set_usize("thin", &mut m.thin);
        p.set_usize("chains", &mut m.chains);
        p.set_u64("seed", &mut m.seed);
        p.set_usize("checkpoint_every", &mut m.checkpoint_every);
        p.set_f64("move_grow", &mut m.weights.grow);
        p.set_f64("move_prune", &mut m.weights.prune);
        p.set_f64("move_change", &mut m.weights.change);
        p.set_f64("move_swap", &mut m.weights.swap);
        p.set_f64("power", &mut cfg.power);
        p.set_usize("workers", &mut cfg.workers);
        cfg.n_min = p.opt_usize("n_min");
        if let Some(v) = p.raw("family") {
            match CorrFamily::parse(v) {
                Some(f) => cfg.family = f,
                None => p.bad("family", v, "`isotropic` or `separable`"),
            }
        }
        if let Some(v) = p.raw("corr_update") {
            match CorrUpdate::parse(v) {
                Some(u) => cfg.corr_update = u,
                None => p.bad("corr_update", v, "`block`, `component` or `fixed`"),
            }
        }
        let h = &mut cfg.hyper;
        h.mu = p.opt_list("mu");
        h.b = p.opt_list("b");
        h.v = p.opt_list("v");
        h.rho = p.opt_f64("rho");
        h.alpha_sigma = p.opt_f64("alpha_sigma");
        h.q_sigma = p.opt_f64("q_sigma");
        h.alpha_tau = p.opt_f64("alpha_tau");
        h.q_tau = p.opt_f64("q_tau");
        h.lambda_g = p.opt_f64("lambda_g");
        h.tree_a = p.opt_f64("tree_a");
        h.tree_b = p.opt_f64("tree_b");
        if cfg.workers == 0 {
            problems.push("workers must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(TgpError::Config(problems))
        }
    }

    /// The model for data with `dim` inputs. Run-length problems are
    /// reported together with model problems.
    pub fn model_spec(&self, dim: usize) -> Result<ModelSpec> {
        let m = dim + 1;
        let mut problems = Vec::new();
        let mut fixed = HyperParams::defaults(m);
        let h = &self.hyper;
        if let Some(mu) = &h.mu {
            match mu.len() {
                1 => fixed.mu = DVector::from_element(m, mu[0]),
                k if k == m => fixed.mu = DVector::from_vec(mu.clone()),
                k => problems.push(format!("mu has {k} values; expected 1 or {m}")),
            }
        }
        for (name, given, target) in [("b", &h.b, &mut fixed.b), ("v", &h.v, &mut fixed.v)] {
            if let Some(vals) = given {
                match square(vals, m) {
                    Some(mat) => *target = mat,
                    None => problems.push(format!(
                        "{name} has {} values; expected 1, {m} or {}",
                        vals.len(),
                        m * m
                    )),
                }
            }
        }
        fixed.rho = h.rho.unwrap_or(fixed.rho);
        fixed.alpha_sigma = h.alpha_sigma.unwrap_or(fixed.alpha_sigma);
        fixed.q_sigma = h.q_sigma.unwrap_or(fixed.q_sigma);
        fixed.alpha_tau = h.alpha_tau.unwrap_or(fixed.alpha_tau);
        fixed.q_tau = h.q_tau.unwrap_or(fixed.q_tau);
        fixed.lambda_g = h.lambda_g.unwrap_or(fixed.lambda_g);
        fixed.tree_a = h.tree_a.unwrap_or(fixed.tree_a);
        fixed.tree_b = h.tree_b.unwrap_or(fixed.tree_b);
        let spec = ModelSpec {
            fixed,
            family: self.family,
            power: self.power,
            n_min: self.n_min.unwrap_or(m + 2),
            corr_update: self.corr_update,
        };
        if problems.is_empty() {
            problems.extend(spec.problems(dim));
        }
        problems.extend(self.mcmc.problems());
        if problems.is_empty() {
            Ok(spec)
        } else {
            Err(TgpError::Config(problems))
        }
    }

    /// Fully resolved text form. `data` and `out` are written as given,
    /// so callers usually replace them first.
    pub fn render(&self, spec: &ModelSpec) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let m = &self.mcmc;
        let f = &spec.fixed;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("data", self.data.display().to_string());
        if let Some(r) = &self.response {
            kv("response", r.clone());
        }
        kv("out", self.out.display().to_string());
        kv("rounds", m.rounds.to_string());
        kv("burn_in", m.burn_in.to_string());
        kv("thin", m.thin.to_string());
        kv("chains", m.chains.to_string());
        kv("seed", m.seed.to_string());
        kv("checkpoint_every", m.checkpoint_every.to_string());
        kv("move_grow", m.weights.grow.to_string());
        kv("move_prune", m.weights.prune.to_string());
        kv("move_change", m.weights.change.to_string());
        kv("move_swap", m.weights.swap.to_string());
        kv("family", spec.family.name().into());
        kv("power", spec.power.to_string());
        kv("n_min", spec.n_min.to_string());
        kv("corr_update", spec.corr_update.name().into());
        kv("mu", list(f.mu.as_slice()));
        kv("b", list(f.b.transpose().as_slice()));
        kv("v", list(f.v.transpose().as_slice()));
        kv("rho", f.rho.to_string());
        kv("alpha_sigma", f.alpha_sigma.to_string());
        kv("q_sigma", f.q_sigma.to_string());
        kv("alpha_tau", f.alpha_tau.to_string());
        kv("q_tau", f.q_tau.to_string());
        kv("lambda_g", f.lambda_g.to_string());
        kv("tree_a", f.tree_a.to_string());
        kv("tree_b", f.tree_b.to_string());
        kv("workers", self.workers.to_string());
        s
    }
}

/// Scalar times identity, a diagonal, or a full row-major matrix.
fn square(vals: &[f64], m: usize) -> Option<DMatrix<f64>> {
    match vals.len() {
        1 => Some(DMatrix::from_diagonal_element(m, m, vals[0])),
        k if k == m => Some(DMatrix::from_diagonal(&DVector::from_column_slice(vals))),
        k if k == m * m => Some(DMatrix::from_row_slice(m, m, vals)),
        _ => None,
    }
}

struct Parser<'a, 'b> {
    entries: &'b BTreeMap<&'a str, (usize, &'a str)>,
    problems: &'b mut Vec<String>,
}

impl<'a> Parser<'a, '_> {
    fn raw(&self, key: &str) -> Option<&'a str> {
        self.entries.get(key).map(|&(_, v)| v)
    }

    fn bad(&mut self, key: &str, value: &str, want: &str) {
        let line = self.entries.get(key).map_or(0, |&(l, _)| l);
        self.problems
            .push(format!("line {line}: `{key}` expects {want}, got `{value}`"));
    }

    fn opt<T: std::str::FromStr>(&mut self, key: &str, want: &str) -> Option<T> {
        let v = self.raw(key)?;
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                self.bad(key, v, want);
                None
            }
        }
    }

    fn opt_usize(&mut self, key: &str) -> Option<usize> {
        self.opt(key, "a nonnegative integer")
    }

    fn opt_f64(&mut self, key: &str) -> Option<f64> {
        let v = self.opt::<f64>(key, "a number")?;
        if v.is_finite() {
            Some(v)
        } else {
            self.bad(key, &v.to_string(), "a finite number");
            None
        }
    }

    fn opt_list(&mut self, key: &str) -> Option<Vec<f64>> {
        let v = self.raw(key)?;
        let parsed: std::result::Result<Vec<f64>, _> =
            v.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match parsed {
            Ok(list) if list.iter().all(|x| x.is_finite()) => Some(list),
            _ => {
                self.bad(key, v, "comma-separated numbers");
                None
            }
        }
    }

    fn set_usize(&mut self, key: &str, slot: &mut usize) {
        if let Some(v) = self.opt_usize(key) {
            *slot = v;
        }
    }

    fn set_u64(&mut self, key: &str, slot: &mut u64) {
        if let Some(v) = self.opt(key, "a nonnegative integer") {
            *slot = v;
        }
    }

    fn set_f64(&mut self, key: &str, slot: &mut f64) {
        if let Some(v) = self.opt_f64(key) {
            *slot = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_apply_when_keys_are_absent() {
        let cfg = FitConfig::parse("data = d.csv\n", Path::new("/tmp/run")).unwrap();
        assert_eq!(cfg.data, Path::new("/tmp/run/d.csv"));
        assert_eq!(cfg.out, Path::new("/tmp/run/tgp-out"));
        let spec = cfg.model_spec(1).unwrap();
        assert_eq!(spec, ModelSpec::defaults(1));
    }

    #[test]
    fn values_are_read() {
        let text = "\
# comment
data = d.csv   # trailing comment
response = y
rounds = 500
burn_in = 100
thin = 4
chains = 3
seed = 17
family = separable
power = 1.5
n_min = 6
corr_update = fixed
mu = 1,2,3
b = 2
v = 1,2,3
tree_a = 0.25
move_change = 0.3
move_swap = 0.3
";
        let cfg = FitConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(cfg.response.as_deref(), Some("y"));
        assert_eq!(
            (cfg.mcmc.rounds, cfg.mcmc.burn_in, cfg.mcmc.thin, cfg.mcmc.chains, cfg.mcmc.seed),
            (500, 100, 4, 3, 17)
        );
        let spec = cfg.model_spec(2).unwrap();
        assert_eq!(spec.family, CorrFamily::Separable);
        assert_eq!((spec.power, spec.n_min), (1.5, 6));
        assert_eq!(spec.corr_update, CorrUpdate::Fixed);
        assert_eq!(spec.fixed.mu.as_slice(), [1.0, 2.0, 3.0]);
        assert_eq!(spec.fixed.b, DMatrix::from_diagonal_element(3, 3, 2.0));
        assert_eq!(spec.fixed.v[(2, 2)], 3.0);
        assert_eq!(spec.fixed.tree_a, 0.25);
    }

    #[test]
    fn every_problem_is_reported() {
        let text = "rounds = ten\nbogus = 1\nfamily = round\nno equals sign\nthin = 2\nthin = 3\n";
        match FitConfig::parse(text, Path::new(".")) {
            Err(TgpError::Config(p)) => assert_eq!(p.len(), 6, "{p:?}"),
            other => panic!("{other:?}"),
        }
        let text = "data = d.csv\nburn_in = 20000\nmu = 1,2\nalpha_sigma = -1\npower = 3\n";
        let cfg = FitConfig::parse(text, Path::new(".")).unwrap();
        match cfg.model_spec(2) {
            Err(TgpError::Config(p)) => assert_eq!(p.len(), 2, "{p:?}"),
            other => panic!("{other:?}"),
        }
        let cfg = FitConfig::parse(&text.replace("mu = 1,2\n", ""), Path::new(".")).unwrap();
        match cfg.model_spec(2) {
            Err(TgpError::Config(p)) => assert_eq!(p.len(), 3, "{p:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rendered_text_parses_to_the_same_model() {
        let text = "data = d.csv\nfamily = separable\nb = 1,0.5,0.5,2\nrho = 4\nseed = 3\n";
        let cfg = FitConfig::parse(text, Path::new("/r")).unwrap();
        let spec = cfg.model_spec(1).unwrap();
        let again = FitConfig::parse(&cfg.render(&spec), Path::new("/r")).unwrap();
        assert_eq!(again.model_spec(1).unwrap(), spec);
        assert_eq!(again.mcmc, cfg.mcmc);
    }
}
