//! Serialized fields. Piecewise-constant fields are stored cell by cell;
//! staircase fields are stored as the inputs that regenerate them, since
//! their cells are far too many to list.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use solenoid_core::fields::{AffineSkew, Partition, PiecewiseConstantField, PiecewisePotential, SkewStack, Value};
use solenoid_core::geometry::{Polytope, Simplex};
use solenoid_core::staircase::StaircaseConfig;
use solenoid_core::Mat;

use crate::config::PieceConfig;
use crate::error::{CliError, CliResult};

pub const DESCRIPTOR_VERSION: &str = "solenoid-field/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDescriptor {
    pub version: String,
    pub field: FieldKind,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum FieldKind {
    PiecewiseConstant(PiecewiseDesc),
    Staircase(StaircaseDesc),
    Stitch(StitchDesc),
}

/// Affine skew potential: `c0` and one gradient block per coordinate, each
/// the `m` full `n × n` matrices concatenated row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialDesc {
    pub c0: Vec<f64>,
    pub grad: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceDesc {
    pub cell: usize,
    pub vertices: Vec<Vec<f64>>,
    pub value: Vec<f64>,
    pub potential: Option<PotentialDesc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseDesc {
    /// Rows and columns of the constrained block.
    pub m: usize,
    pub n: usize,
    /// Components after the block (`P`, `h` for Born-Infeld values).
    pub free: usize,
    pub domain: Vec<Vec<f64>>,
    pub outlines: Vec<Vec<Vec<f64>>>,
    pub pieces: Vec<PieceDesc>,
    pub background: Vec<f64>,
    /// Prescribed average of the field.
    pub target_average: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaircaseDesc {
    pub value: [f64; 10],
    pub safety: f64,
    pub config: StaircaseConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StitchDesc {
    pub pieces: Vec<PieceConfig>,
    pub j: usize,
    pub safety: f64,
    pub random_tests: usize,
    pub config: StaircaseConfig,
}

fn skew_flat(s: &SkewStack) -> Vec<f64> {
    s.to_mats().iter().flat_map(|m| m.data().to_vec()).collect()
}

fn skew_from(flat: &[f64], m: usize, n: usize) -> CliResult<SkewStack> {
    if flat.len() != m * n * n {
        return Err(CliError::Config("potential block has the wrong length".into()));
    }
    let mats = flat
        .chunks(n * n)
        .map(|c| Mat::new(n, n, c.to_vec()))
        .collect::<solenoid_core::Result<Vec<_>>>()?;
    Ok(SkewStack::from_mats(&mats)?)
}

impl PiecewiseDesc {
    pub fn from_field(
        field: &PiecewiseConstantField,
        potential: Option<&PiecewisePotential>,
        target_average: Vec<f64>,
    ) -> Self {
        let part = &field.partition;
        let pieces = part
            .pieces
            .iter()
            .enumerate()
            .map(|(i, s)| PieceDesc {
                cell: part.owner[i],
                vertices: s.vertices.clone(),
                value: field.values[i].flatten(),
                potential: potential.map(|p| PotentialDesc {
                    c0: skew_flat(&p.maps[i].c0),
                    grad: p.maps[i].grad.iter().map(skew_flat).collect(),
                }),
            })
            .collect();
        PiecewiseDesc {
            m: field.background.mat.rows(),
            n: field.background.mat.cols(),
            free: field.background.free.len(),
            domain: part.domain.vertices().to_vec(),
            outlines: part.outlines.iter().map(|o| o.vertices().to_vec()).collect(),
            pieces,
            background: field.background.flatten(),
            target_average,
        }
    }

    fn value(&self, flat: &[f64]) -> CliResult<Value> {
        let k = self.m * self.n;
        if flat.len() != k + self.free {
            return Err(CliError::Config(format!(
                "value has {} components, expected {}",
                flat.len(),
                k + self.free
            )));
        }
        Ok(Value::with_free(
            Mat::new(self.m, self.n, flat[..k].to_vec())?,
            flat[k..].to_vec(),
        ))
    }

    /// Rebuilds the field and, when every piece carries one, the potential.
    pub fn to_field(&self) -> CliResult<(PiecewiseConstantField, Option<PiecewisePotential>)> {
        let domain = Polytope::from_vertices(self.n, self.domain.clone())?;
        let mut cells: Vec<(Polytope, Vec<Simplex>)> = self
            .outlines
            .iter()
            .map(|o| Ok((Polytope::from_vertices(self.n, o.clone())?, Vec::new())))
            .collect::<CliResult<_>>()?;
        let mut last = 0;
        for p in &self.pieces {
            if p.cell >= cells.len() || p.cell < last {
                return Err(CliError::Config(
                    "pieces must be grouped by cell in increasing order".into(),
                ));
            }
            last = p.cell;
            cells[p.cell].1.push(Simplex::new(p.vertices.clone()));
        }
        let part = Arc::new(Partition::new(domain, cells)?);
        let values = self
            .pieces
            .iter()
            .map(|p| self.value(&p.value))
            .collect::<CliResult<Vec<_>>>()?;
        let field = PiecewiseConstantField::new(part.clone(), values, self.value(&self.background)?)?;
        let potential = if !self.pieces.is_empty() && self.pieces.iter().all(|p| p.potential.is_some()) {
            let maps = self
                .pieces
                .iter()
                .map(|p| {
                    let d = p.potential.as_ref().expect("checked");
                    Ok(AffineSkew {
                        c0: skew_from(&d.c0, self.m, self.n)?,
                        grad: d
                            .grad
                            .iter()
                            .map(|g| skew_from(g, self.m, self.n))
                            .collect::<CliResult<_>>()?,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            Some(PiecewisePotential::new(part, self.m, maps)?)
        } else {
            None
        };
        Ok((field, potential))
    }
}
