//! Experiment configuration files.
//!
//! The format is structured text: `key = value` lines, optional `[section]`
//! headers that prefix the keys below them, full-line `#` comments. A key
//! can equivalently be written dotted at top level (`grid.N = 17`) or bare
//! under its section (`[grid]` then `N = 17`). Unknown keys and sections
//! are rejected with their line number, as are duplicates: a config either
//! parses to exactly one validated [`ExperimentConfig`] or fails loudly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// experiment kinds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Flow,
    ConvexityIntrinsic,
    ConvexityExtrinsic,
    Uniqueness,
    Hardy,
    Green,
    Monotonicity,
    EpsRegularity,
    OperatorSelftest,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::Flow,
        ExperimentKind::ConvexityIntrinsic,
        ExperimentKind::ConvexityExtrinsic,
        ExperimentKind::Uniqueness,
        ExperimentKind::Hardy,
        ExperimentKind::Green,
        ExperimentKind::Monotonicity,
        ExperimentKind::EpsRegularity,
        ExperimentKind::OperatorSelftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Flow => "flow",
            ExperimentKind::ConvexityIntrinsic => "convexity-intrinsic",
            ExperimentKind::ConvexityExtrinsic => "convexity-extrinsic",
            ExperimentKind::Uniqueness => "uniqueness",
            ExperimentKind::Hardy => "hardy",
            ExperimentKind::Green => "green",
            ExperimentKind::Monotonicity => "monotonicity",
            ExperimentKind::EpsRegularity => "eps-regularity",
            ExperimentKind::OperatorSelftest => "operator-selftest",
        }
    }

    fn from_name(s: &str) -> Option<ExperimentKind> {
        ExperimentKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Headline relative gate of the kind, used where its checks compare a
    /// measured quantity against an oracle or a documented bound.
    fn default_rel_tol(self) -> f64 {
        match self {
            // finite-difference agreement of the energy gradient
            ExperimentKind::OperatorSelftest => 1e-5,
            // energy-inequality slack relative to the initial tension
            ExperimentKind::Flow => 1e-6,
            // convexity slack factor relative to the energy scale
            ExperimentKind::ConvexityIntrinsic | ExperimentKind::ConvexityExtrinsic => 1e-3,
            ExperimentKind::Uniqueness => 1e-3,
            // oracle deviation; tight oracles need fine grids, so the
            // default is the coarse-grid gate
            ExperimentKind::Hardy => 0.2,
            // deviation of psi(0) from the closed form
            ExperimentKind::Green => 0.1,
            // dip tolerance of the monotone profiles
            ExperimentKind::Monotonicity => 1e-3,
            // stability factor of the scale-normalized profiles
            ExperimentKind::EpsRegularity => 2.0,
        }
    }

    /// Per-kind seed list; the length doubles as the sample count where a
    /// kind derives its own pair seeds.
    fn default_seeds(self) -> Vec<u64> {
        match self {
            ExperimentKind::ConvexityIntrinsic
            | ExperimentKind::ConvexityExtrinsic
            | ExperimentKind::Hardy => (1..=50).collect(),
            ExperimentKind::Uniqueness => vec![1, 2, 3],
            ExperimentKind::Monotonicity => vec![1, 2, 3, 4, 5],
            _ => vec![1],
        }
    }
}

// ---------------------------------------------------------------------------
// the config
// ---------------------------------------------------------------------------

/// A fully validated experiment description. Parsing fills every default,
/// so two configs are interchangeable iff they compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Lattice nodes per axis (`grid.N`), odd and at least 5.
    pub grid_n: usize,
    /// Target sphere dimension (`sphere.n`); maps have `n + 1` components.
    pub sphere_n: usize,
    /// Small-energy budget of the experiment.
    pub eps0: f64,
    /// Perturbation amplitudes; sweeps cycle through them, single-flow
    /// kinds take the last (largest) entry.
    pub amplitudes: Vec<f64>,
    /// Seeds; sweep kinds use the length as their sample count.
    pub seeds: Vec<u64>,
    /// Flow convergence tolerance on the weighted-L2 residual.
    pub tol_residual: f64,
    /// Relative gate of the kind's headline check.
    pub tol_rel: f64,
    /// Limit-distance gate of the uniqueness experiment.
    pub tol_distance: f64,
    /// Report output directory (`output.dir`).
    pub out_dir: String,
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            kind,
            grid_n: 17,
            sphere_n: 2,
            eps0: 0.05,
            amplitudes: vec![0.02, 0.05, 0.1],
            seeds: kind.default_seeds(),
            tol_residual: 1e-8,
            tol_rel: kind.default_rel_tol(),
            tol_distance: 1e-4,
            out_dir: "out".to_string(),
        }
    }

    /// Parses and validates the text form. Deterministic in the input
    /// bytes: same text, same config.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let entries = tokenize(text)?;

        // kind decides seed and tolerance defaults, so resolve it first.
        let mut kind = None;
        for e in &entries {
            if e.key == "kind" {
                kind = Some(match ExperimentKind::from_name(&e.value) {
                    Some(k) => k,
                    None => {
                        return Err(parse_err(
                            e.line,
                            format!("unknown experiment kind `{}`", e.value),
                        ))
                    }
                });
            }
        }
        let kind = kind.ok_or_else(|| parse_err(0, "missing required key `kind`".into()))?;

        let mut cfg = ExperimentConfig::defaults(kind);
        for e in &entries {
            match e.key.as_str() {
                "kind" => {}
                "grid.N" => {
                    let n: usize = num(e)?;
                    if n < 5 || n % 2 == 0 {
                        return Err(parse_err(e.line, format!("N must be odd >= 5, got {n}")));
                    }
                    if n > 65 {
                        return Err(parse_err(
                            e.line,
                            format!("N = {n} exceeds the supported maximum 65"),
                        ));
                    }
                    cfg.grid_n = n;
                }
                "sphere.n" => {
                    let n: usize = num(e)?;
                    if !(1..=15).contains(&n) {
                        return Err(parse_err(
                            e.line,
                            format!("sphere dimension must be in 1..=15, got {n}"),
                        ));
                    }
                    cfg.sphere_n = n;
                }
                "eps0" => cfg.eps0 = pos_f64(e, 100.0)?,
                "amplitudes" => {
                    let v = f64_list(e)?;
                    for &a in &v {
                        if !(a > 0.0 && a <= 1.0) {
                            return Err(parse_err(
                                e.line,
                                format!("amplitudes must lie in (0, 1], got {a}"),
                            ));
                        }
                    }
                    cfg.amplitudes = v;
                }
                "seeds" => {
                    let mut v = Vec::new();
                    for part in e.value.split(',') {
                        let part = part.trim();
                        v.push(part.parse::<u64>().map_err(|_| {
                            parse_err(e.line, format!("bad seed `{part}`"))
                        })?);
                    }
                    if v.is_empty() || v.len() > 10_000 {
                        return Err(parse_err(
                            e.line,
                            format!("need between 1 and 10000 seeds, got {}", v.len()),
                        ));
                    }
                    cfg.seeds = v;
                }
                "tolerances.residual" => cfg.tol_residual = pos_f64(e, 1.0)?,
                "tolerances.rel" => cfg.tol_rel = pos_f64(e, 1e3)?,
                "tolerances.distance" => cfg.tol_distance = pos_f64(e, 1.0)?,
                "output.dir" => {
                    if e.value.is_empty() {
                        return Err(parse_err(e.line, "output directory must not be empty".into()));
                    }
                    cfg.out_dir = e.value.clone();
                }
                k => return Err(parse_err(e.line, format!("unknown key `{k}`"))),
            }
        }
        Ok(cfg)
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind = {}", self.kind.name());
        let _ = writeln!(s, "eps0 = {}", self.eps0);
        let _ = writeln!(
            s,
            "amplitudes = {}",
            self.amplitudes
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        );
        let _ = writeln!(
            s,
            "seeds = {}",
            self.seeds
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        );
        let _ = writeln!(s, "grid.N = {}", self.grid_n);
        let _ = writeln!(s, "sphere.n = {}", self.sphere_n);
        let _ = writeln!(s, "tolerances.residual = {}", self.tol_residual);
        let _ = writeln!(s, "tolerances.rel = {}", self.tol_rel);
        let _ = writeln!(s, "tolerances.distance = {}", self.tol_distance);
        let _ = writeln!(s, "output.dir = {}", self.out_dir);
        s
    }
}

/// Reads and parses a config file.
pub fn parse_config<P: AsRef<Path>>(path: P) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::parse(&text)
}

// ---------------------------------------------------------------------------
// lexing
// ---------------------------------------------------------------------------

const SECTIONS: [&str; 4] = ["grid", "sphere", "tolerances", "output"];

struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn parse_err(line: usize, msg: String) -> Error {
    Error::ConfigParse { line, msg }
}

fn tokenize(text: &str) -> Result<Vec<Entry>> {
    let mut section: Option<&str> = None;
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim();
            section = match SECTIONS.iter().find(|s| **s == name) {
                Some(s) => Some(s),
                None => return Err(parse_err(line, format!("unknown section `[{name}]`"))),
            };
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            return Err(parse_err(line, format!("expected `key = value`, got `{t}`")));
        };
        let bare = k.trim();
        if bare.is_empty() {
            return Err(parse_err(line, "empty key".into()));
        }
        let key = match section {
            Some(s) if !bare.contains('.') => format!("{s}.{bare}"),
            _ => bare.to_string(),
        };
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err(parse_err(
                line,
                format!("duplicate key `{key}` (first set at line {})", prev.line),
            ));
        }
        entries.push(Entry {
            line,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(entries)
}

fn num<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value
        .parse::<T>()
        .map_err(|_| parse_err(e.line, format!("bad number `{}`", e.value)))
}

fn pos_f64(e: &Entry, max: f64) -> Result<f64> {
    let v: f64 = num(e)?;
    if !(v > 0.0 && v <= max && v.is_finite()) {
        return Err(parse_err(
            e.line,
            format!("value must lie in (0, {max}], got {v}"),
        ));
    }
    Ok(v)
}

fn f64_list(e: &Entry) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    for part in e.value.split(',') {
        let part = part.trim();
        v.push(
            part.parse::<f64>()
                .map_err(|_| parse_err(e.line, format!("bad number `{part}`")))?,
        );
    }
    if v.is_empty() {
        return Err(parse_err(e.line, "need at least one value".into()));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_fills_the_documented_defaults() {
        let cfg = ExperimentConfig::parse("kind = flow").unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Flow);
        assert_eq!(cfg.grid_n, 17);
        assert_eq!(cfg.sphere_n, 2);
        assert_eq!(cfg.eps0, 0.05);
        assert_eq!(cfg.amplitudes, vec![0.02, 0.05, 0.1]);
        assert_eq!(cfg.out_dir, "out");
    }

    #[test]
    fn sections_and_dotted_keys_are_interchangeable() {
        let a = ExperimentConfig::parse("kind = hardy\ngrid.N = 9\ntolerances.rel = 0.05").unwrap();
        let b = ExperimentConfig::parse(
            "kind = hardy\n[grid]\nN = 9\n[tolerances]\nrel = 0.05",
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.grid_n, 9);
        assert_eq!(a.tol_rel, 0.05);
    }

    #[test]
    fn even_grid_is_rejected_at_its_line() {
        let err = ExperimentConfig::parse("kind = flow\n\ngrid.N = 4").unwrap_err();
        match err {
            Error::ConfigParse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("N must be odd >= 5"), "{msg}");
            }
            other => panic!("wrong error {other}"),
        }
    }

    #[test]
    fn unknown_keys_sections_and_duplicates_are_rejected() {
        for (text, needle) in [
            ("kind = flow\nbogus = 1", "unknown key"),
            ("kind = flow\n[plotting]\nstyle = fancy", "unknown section"),
            ("kind = flow\neps0 = 0.1\neps0 = 0.2", "duplicate key"),
            ("eps0 = 0.1", "missing required key"),
            ("kind = warp", "unknown experiment kind"),
            ("kind = flow\neps0 = -3", "must lie in"),
            ("kind = flow\nseeds = 1, x", "bad seed"),
            ("kind = flow\namplitudes = 2.0", "amplitudes must lie"),
            ("kind = flow\ngrid.N", "expected `key = value`"),
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert!(
                err.to_string().contains(needle),
                "`{text}` gave `{err}`, wanted `{needle}`"
            );
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = ExperimentConfig::parse(
            "# experiment\n\nkind = green\n# gates\ntolerances.rel = 0.2\n",
        )
        .unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Green);
        assert_eq!(cfg.tol_rel, 0.2);
    }

    #[test]
    fn serialization_round_trips_to_an_equal_config() {
        let texts = [
            "kind = flow".to_string(),
            "kind = uniqueness\ngrid.N = 9\nseeds = 7, 8, 9\ntolerances.distance = 0.001"
                .to_string(),
            "kind = convexity-intrinsic\namplitudes = 0.01, 0.03\neps0 = 0.07".to_string(),
        ];
        for text in texts {
            let cfg = ExperimentConfig::parse(&text).unwrap();
            let round = ExperimentConfig::parse(&cfg.serialize()).unwrap();
            assert_eq!(cfg, round, "round trip of `{text}`");
        }
    }

    #[test]
    fn kind_defaults_differ_where_documented() {
        let conv = ExperimentConfig::defaults(ExperimentKind::ConvexityIntrinsic);
        assert_eq!(conv.seeds.len(), 50);
        assert_eq!(conv.tol_rel, 1e-3);
        let hardy = ExperimentConfig::defaults(ExperimentKind::Hardy);
        assert_eq!(hardy.seeds.len(), 50);
        assert_eq!(hardy.tol_rel, 0.2);
        let uniq = ExperimentConfig::defaults(ExperimentKind::Uniqueness);
        assert_eq!(uniq.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn file_loading_reports_io_errors() {
        assert!(matches!(
            parse_config("/no/such/biflow.cfg"),
            Err(Error::Io(_))
        ));
    }
}
