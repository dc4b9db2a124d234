//! Run configuration: a JSON file whose keys are validated against a fixed
//! schema, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::read_file;

/// An axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// A box carrying a constant Born-Infeld value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceConfig {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub value: [f64; 10],
}

/// Tolerances used by the certificates; every report embeds them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative weak-divergence tolerance.
    pub div: f64,
    /// Relative average tolerance.
    pub average: f64,
    /// Symbol residual tolerance relative to `1 + |v|`.
    pub symbol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            div: 1e-10,
            average: 1e-10,
            symbol: 1e-12,
        }
    }
}

/// Keys accepted in a config file. Every key is optional; commands fill in
/// their own defaults and ignore keys they do not use.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// When present, must name the subcommand being run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Matrix states of a plain laminate (rows).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    /// Born-Infeld states `(D, B, P, h)` of a laminate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<[f64; 10]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<[f64; 10]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<BoxDomain>,
    /// Points for `hull-check` and `decompose`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 10]>>,
    /// Compact set of an in-approximation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compact_set: Option<Vec<[f64; 10]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safety: Option<f64>,
    /// Constant value of the staircase data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<[f64; 10]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pieces: Option<Vec<PieceConfig>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_levels: Option<u32>,
    /// Number of random piecewise-affine test functions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_tests: Option<usize>,
    /// Random vectors for the wave-cone witness check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_samples: Option<usize>,
    /// Field descriptor read by `verify` and `export`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<Tolerances>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies values set on the command line.
    pub fn merge(&mut self, o: &RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if o.$f.is_some() { self.$f = o.$f.clone(); } )* };
        }
        take!(seed, out, format, grid_h, i_max, j, tau, delta, field);
    }

    pub fn check_command(&self, name: &str) -> CliResult<()> {
        match &self.command {
            Some(c) if c != name => Err(CliError::Config(format!("config is for `{c}`, not `{name}`"))),
            _ => Ok(()),
        }
    }
}

/// Rejects non-finite or out-of-range scalars with the key name.
pub fn require(name: &str, ok: bool) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("invalid value for `{name}`")))
    }
}
