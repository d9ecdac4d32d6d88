//! JSON documents: MSP instances and piecewise-quadratic objectives.
//!
//! Matrices are row-major arrays of rows. A matrix with zero rows is written
//! as `[]`; its column count is implied by `n`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{
    BaseSet, ConstraintSetS1, ConstraintSetS2, Matrix, MspInstance, NoiseModel, QuadraticComponent,
    QuadraticStageCost, StageConstraints, StageData, StageNoise, Vector,
};
use crate::qcsc::{PiecewiseQuadratic, QuadBranch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    #[serde(rename = "T")]
    pub t: usize,
    pub n: usize,
    pub x0: Vec<f64>,
    pub stages: Vec<StageDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDoc {
    pub costs: Vec<CostDoc>,
    /// One constraint object shared by all realizations, or a list with
    /// one entry per realization.
    pub constraints: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostDoc {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub d: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsDoc {
    #[serde(rename = "A", default)]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B", default)]
    pub b_mat: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
    pub base_set: BaseSetDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<ComponentDoc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum BaseSetDoc {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Simplex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDoc {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseDoc {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub xis: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

fn field_err(path: &str, e: Error) -> Error {
    match e {
        Error::Stage { .. } => e,
        Error::InvalidInput(msg) | Error::Dimension(msg) => {
            Error::InvalidInput(format!("{path}: {msg}"))
        }
        other => Error::InvalidInput(format!("{path}: {other}")),
    }
}

fn matrix(path: &str, rows: &[Vec<f64>], ncols: usize) -> Result<Matrix> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::InvalidInput(format!(
                "{path}[{i}]: expected {ncols} columns, got {}",
                r.len()
            )));
        }
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn square(path: &str, rows: &[Vec<f64>], size: usize) -> Result<Matrix> {
    if rows.len() != size {
        return Err(Error::InvalidInput(format!(
            "{path}: expected {size} rows, got {}",
            rows.len()
        )));
    }
    matrix(path, rows, size)
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn vec_of(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

impl BaseSetDoc {
    pub fn to_base_set(&self) -> Result<BaseSet> {
        match self {
            BaseSetDoc::Simplex => Ok(BaseSet::Simplex),
            BaseSetDoc::Box { lower, upper } => BaseSet::boxed(
                Vector::from_column_slice(lower),
                Vector::from_column_slice(upper),
            ),
        }
    }

    pub fn from_base_set(b: &BaseSet) -> Self {
        match b {
            BaseSet::Simplex => BaseSetDoc::Simplex,
            BaseSet::Box { lower, upper } => BaseSetDoc::Box {
                lower: vec_of(lower),
                upper: vec_of(upper),
            },
        }
    }
}

impl ConstraintsDoc {
    fn to_constraints(&self, path: &str, n: usize) -> Result<StageConstraints> {
        let a = matrix(&format!("{path}.A"), &self.a, n)?;
        let b_mat = matrix(&format!("{path}.B"), &self.b_mat, n)?;
        let base = self
            .base_set
            .to_base_set()
            .map_err(|e| field_err(&format!("{path}.base_set"), e))?;
        let b = Vector::from_column_slice(&self.b);
        // a missing B means no dependence on the previous state
        let b_mat = if self.b_mat.is_empty() && !self.a.is_empty() {
            Matrix::zeros(a.nrows(), n)
        } else {
            b_mat
        };
        let linear = ConstraintSetS1::new(a, b_mat, b, base).map_err(|e| field_err(path, e))?;
        match &self.g {
            None => Ok(StageConstraints::S1(linear)),
            Some(gs) => {
                let mut g = Vec::with_capacity(gs.len());
                for (i, c) in gs.iter().enumerate() {
                    let p = format!("{path}.g[{i}]");
                    let h = square(&format!("{p}.H"), &c.h, 2 * n)?;
                    g.push(
                        QuadraticComponent::new(n, h, Vector::from_column_slice(&c.c), c.d)
                            .map_err(|e| field_err(&p, e))?,
                    );
                }
                Ok(StageConstraints::S2(ConstraintSetS2 { linear, g }))
            }
        }
    }

    fn from_constraints(c: &StageConstraints) -> Self {
        let lin = c.linear();
        let g = match c {
            StageConstraints::S1(_) => None,
            StageConstraints::S2(s2) => Some(
                s2.g.iter()
                    .map(|g| ComponentDoc {
                        h: rows_of(&g.h),
                        c: vec_of(&g.c),
                        d: g.d,
                    })
                    .collect(),
            ),
        };
        ConstraintsDoc {
            a: rows_of(&lin.a),
            b_mat: rows_of(&lin.b_mat),
            b: vec_of(&lin.b),
            base_set: BaseSetDoc::from_base_set(&lin.base_set),
            g,
        }
    }
}

impl InstanceDoc {
    pub fn to_instance(&self) -> Result<MspInstance> {
        let n = self.n;
        if n == 0 {
            return Err(Error::InvalidInput("n: must be at least 1".into()));
        }
        if self.t != self.stages.len() {
            return Err(Error::InvalidInput(format!(
                "T: declares {} stages but stages has {} entries",
                self.t,
                self.stages.len()
            )));
        }
        if self.x0.len() != n {
            return Err(Error::InvalidInput(format!(
                "x0: expected length {n}, got {}",
                self.x0.len()
            )));
        }
        let mut stages = Vec::with_capacity(self.t);
        let mut noise = Vec::with_capacity(self.t);
        for (i, s) in self.stages.iter().enumerate() {
            let path = format!("stages[{i}]");
            let mut costs = Vec::with_capacity(s.costs.len());
            for (j, c) in s.costs.iter().enumerate() {
                let p = format!("{path}.costs[{j}]");
                let h = square(&format!("{p}.H"), &c.h, 2 * n)?;
                costs.push(
                    QuadraticStageCost::new(n, h, Vector::from_column_slice(&c.c), c.d, c.alpha)
                        .map_err(|e| field_err(&p, e))?,
                );
            }
            let constraints = match &s.constraints {
                Value::Array(items) => {
                    let mut out = Vec::with_capacity(items.len());
                    for (j, item) in items.iter().enumerate() {
                        let p = format!("{path}.constraints[{j}]");
                        let doc: ConstraintsDoc = serde_json::from_value(item.clone())
                            .map_err(|e| Error::InvalidInput(format!("{p}: {e}")))?;
                        out.push(doc.to_constraints(&p, n)?);
                    }
                    out
                }
                other => {
                    let p = format!("{path}.constraints");
                    let doc: ConstraintsDoc = serde_json::from_value(other.clone())
                        .map_err(|e| Error::InvalidInput(format!("{p}: {e}")))?;
                    vec![doc.to_constraints(&p, n)?]
                }
            };
            let stage_noise = match &s.noise {
                None if s.costs.len() == 1 => StageNoise::deterministic(),
                None => {
                    return Err(Error::InvalidInput(format!(
                        "{path}.noise: required when a stage has several costs"
                    )))
                }
                Some(nd) => StageNoise::new(
                    nd.xis
                        .iter()
                        .map(|x| Vector::from_column_slice(x))
                        .collect(),
                    nd.probs.clone(),
                )
                .map_err(|e| field_err(&format!("{path}.noise"), e))?,
            };
            stages.push(StageData { costs, constraints });
            noise.push(stage_noise);
        }
        MspInstance::new(
            n,
            Vector::from_column_slice(&self.x0),
            stages,
            NoiseModel { stages: noise },
        )
        .map_err(|e| field_err("instance", e))
    }

    pub fn from_instance(inst: &MspInstance) -> Self {
        let stages = (1..=inst.num_stages())
            .map(|t| {
                let data = inst.stage(t);
                let costs = data
                    .costs
                    .iter()
                    .map(|c| CostDoc {
                        h: rows_of(c.h()),
                        c: vec_of(c.c()),
                        d: c.d(),
                        alpha: c.alpha(),
                    })
                    .collect();
                let cons: Vec<ConstraintsDoc> = data
                    .constraints
                    .iter()
                    .map(ConstraintsDoc::from_constraints)
                    .collect();
                let constraints = if cons.len() == 1 {
                    serde_json::to_value(&cons[0])
                } else {
                    serde_json::to_value(&cons)
                }
                .expect("constraint documents serialize");
                let sn = inst.noise().stage(t);
                StageDoc {
                    costs,
                    constraints,
                    noise: Some(NoiseDoc {
                        xis: sn.xis.iter().map(vec_of).collect(),
                        probs: sn.probs.clone(),
                    }),
                }
            })
            .collect();
        InstanceDoc {
            t: inst.num_stages(),
            n: inst.n(),
            x0: vec_of(inst.x0()),
            stages,
        }
    }
}

pub fn instance_from_str(s: &str) -> Result<MspInstance> {
    let doc: InstanceDoc = serde_json::from_str(s)?;
    doc.to_instance()
}

pub fn instance_to_string(inst: &MspInstance) -> Result<String> {
    to_json_string(&InstanceDoc::from_instance(inst))
}

/// Pretty printer that writes every float with 17 significant digits, so
/// two runs that agree bitwise produce identical files.
struct Fixed17<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> std::io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for Fixed17<'_> {
    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );

    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

/// Pretty JSON with 17-significant-digit floats. Non-finite floats become
/// `null`.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn read_instance(path: &Path) -> Result<MspInstance> {
    instance_from_str(&std::fs::read_to_string(path)?)
}

pub fn write_instance(path: &Path, inst: &MspInstance) -> Result<()> {
    std::fs::write(path, instance_to_string(inst)?)?;
    Ok(())
}

/// `{"branches": [{"a", "b", "c"}], "domain": {...}, "mu"?}`: the max of
/// `a‖x‖² + <b, x> + c` over the branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveDoc {
    pub branches: Vec<BranchDoc>,
    pub domain: BaseSetDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchDoc {
    pub a: f64,
    pub b: Vec<f64>,
    #[serde(default)]
    pub c: f64,
}

impl ObjectiveDoc {
    pub fn to_objective(&self) -> Result<PiecewiseQuadratic> {
        let branches = self
            .branches
            .iter()
            .map(|b| QuadBranch {
                a: b.a,
                b: Vector::from_column_slice(&b.b),
                c: b.c,
            })
            .collect();
        let domain = self
            .domain
            .to_base_set()
            .map_err(|e| field_err("domain", e))?;
        PiecewiseQuadratic::new(branches, domain, self.mu).map_err(|e| field_err("objective", e))
    }
}

pub fn objective_from_str(s: &str) -> Result<PiecewiseQuadratic> {
    serde_json::from_str::<ObjectiveDoc>(s)?.to_objective()
}
