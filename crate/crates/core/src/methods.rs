//! Method registry: identifiers, hyperparameter grids, typed configurations,
//! fitting, out-of-sample prediction and per-cell scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::PredictionSet;
use crate::error::{Error, Result};
use crate::estimators::{self, fit_soft, one_hot, EstimatorSpec, Featurizer, ProbPredictor};
use crate::kernel::Gamma;
use crate::mapping::{coral, linear_ot, mmd_ls_map, nn_displacement, AffineMap, CoralReg, LocationScaleMap};
use crate::ot::{barycentric_map, class_reg_ot_plan, cost_matrix, exact_ot_plan, sinkhorn_plan, uniform, CostNorm, Metric};
use crate::otherda::{dasvm_fit, jdot_fit, ot_label_prop};
use crate::reweight::{
    density_ratio_weights, kliep_weights, kmm_weights, mmd_target_shift_weights, Bandwidth, DomainClassifier, RatioKind,
    SampleWeights,
};
use crate::scorers::{self, ScorerId, ScorerValue};
use crate::subspace::{jpca_adapt, sa_adapt, tsl_adapt, Projection, Side, TcaBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    TrainSrc,
    DensRw,
    DiscRw,
    GaussRw,
    Kliep,
    Kmm,
    NnRw,
    MmdTarS,
    Coral,
    MapOt,
    EntOt,
    ClassRegOt,
    LinOt,
    MmdLs,
    Jpca,
    Sa,
    Tca,
    Tsl,
    Jdot,
    OtLabelProp,
    Dasvm,
    TrainTgt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Baseline,
    Reweighting,
    Mapping,
    Subspace,
    Other,
}

impl MethodId {
    /// Table order: source baseline, the twenty methods by family, target oracle.
    pub const ALL: [MethodId; 22] = [
        MethodId::TrainSrc,
        MethodId::DensRw,
        MethodId::DiscRw,
        MethodId::GaussRw,
        MethodId::Kliep,
        MethodId::Kmm,
        MethodId::NnRw,
        MethodId::MmdTarS,
        MethodId::Coral,
        MethodId::MapOt,
        MethodId::EntOt,
        MethodId::ClassRegOt,
        MethodId::LinOt,
        MethodId::MmdLs,
        MethodId::Jpca,
        MethodId::Sa,
        MethodId::Tca,
        MethodId::Tsl,
        MethodId::Jdot,
        MethodId::OtLabelProp,
        MethodId::Dasvm,
        MethodId::TrainTgt,
    ];

    pub fn display(&self) -> &'static str {
        match self {
            MethodId::TrainSrc => "Train Src",
            MethodId::DensRw => "Dens. RW",
            MethodId::DiscRw => "Disc. RW",
            MethodId::GaussRw => "Gauss. RW",
            MethodId::Kliep => "KLIEP",
            MethodId::Kmm => "KMM",
            MethodId::NnRw => "NN RW",
            MethodId::MmdTarS => "MMDTarS",
            MethodId::Coral => "CORAL",
            MethodId::MapOt => "MapOT",
            MethodId::EntOt => "EntOT",
            MethodId::ClassRegOt => "ClassRegOT",
            MethodId::LinOt => "LinOT",
            MethodId::MmdLs => "MMD-LS",
            MethodId::Jpca => "JPCA",
            MethodId::Sa => "SA",
            MethodId::Tca => "TCA",
            MethodId::Tsl => "TSL",
            MethodId::Jdot => "JDOT",
            MethodId::OtLabelProp => "OTLabelProp",
            MethodId::Dasvm => "DASVM",
            MethodId::TrainTgt => "Train Tgt",
        }
    }

    /// Snake-case identifier, as serialized.
    pub fn id(&self) -> &'static str {
        match self {
            MethodId::TrainSrc => "train_src",
            MethodId::DensRw => "dens_rw",
            MethodId::DiscRw => "disc_rw",
            MethodId::GaussRw => "gauss_rw",
            MethodId::Kliep => "kliep",
            MethodId::Kmm => "kmm",
            MethodId::NnRw => "nn_rw",
            MethodId::MmdTarS => "mmd_tar_s",
            MethodId::Coral => "coral",
            MethodId::MapOt => "map_ot",
            MethodId::EntOt => "ent_ot",
            MethodId::ClassRegOt => "class_reg_ot",
            MethodId::LinOt => "lin_ot",
            MethodId::MmdLs => "mmd_ls",
            MethodId::Jpca => "jpca",
            MethodId::Sa => "sa",
            MethodId::Tca => "tca",
            MethodId::Tsl => "tsl",
            MethodId::Jdot => "jdot",
            MethodId::OtLabelProp => "ot_label_prop",
            MethodId::Dasvm => "dasvm",
            MethodId::TrainTgt => "train_tgt",
        }
    }

    /// Accepts the snake-case id or the display name, case-insensitively.
    pub fn parse(s: &str) -> Option<Self> {
        let norm = |v: &str| v.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        let want = norm(s);
        Self::ALL.iter().copied().find(|m| norm(m.id()) == want || norm(m.display()) == want)
    }

    pub fn family(&self) -> Family {
        use MethodId::*;
        match self {
            TrainSrc | TrainTgt => Family::Baseline,
            DensRw | DiscRw | GaussRw | Kliep | Kmm | NnRw | MmdTarS => Family::Reweighting,
            Coral | MapOt | EntOt | ClassRegOt | LinOt | MmdLs => Family::Mapping,
            Jpca | Sa | Tca | Tsl => Family::Subspace,
            Jdot | OtLabelProp | Dasvm => Family::Other,
        }
    }

    pub fn is_oracle(&self) -> bool {
        *self == MethodId::TrainTgt
    }

    pub fn is_baseline(&self) -> bool {
        self.family() == Family::Baseline
    }

    /// Default grid, transcribed from the benchmark's appendix.
    pub fn default_grid(&self) -> Grid {
        use MethodId::*;
        use ParamValue::{Bool as B, Float as F, Int as I, Null as N, Str as S};
        let s = |v: &str| S(v.to_string());
        let gammas = || vec![F(1e-4), F(1e-3), F(1e-2), F(0.1), F(1.0), F(10.0), F(100.0), F(1000.0)];
        let ks = || [1, 2, 5, 10, 20, 50, 100].into_iter().map(I).collect::<Vec<_>>();
        let metrics = || vec![s("sqeuclidean"), s("cosine"), s("cityblock")];
        let mut g = Grid::default();
        match self {
            TrainSrc | TrainTgt => {}
            Kliep => {
                let mut gm = gammas();
                gm.extend([s("auto"), s("scale")]);
                g.set("cv", vec![I(5)]).set("gamma", gm).set("max_iter", vec![I(1000)]).set("n_centers", vec![I(100)]);
                g.set("random_state", vec![I(0)]).set("tol", vec![F(1e-6)]);
            }
            Kmm => {
                let mut gm = gammas();
                gm.push(N);
                g.set("B", vec![F(1000.0)]).set("gamma", gm).set("max_iter", vec![I(1000)]);
                g.set("smooth_weights", vec![B(false)]).set("tol", vec![F(1e-6)]);
            }
            NnRw => {
                g.set("laplace_smoothing", vec![B(true), B(false)]);
            }
            MapOt => {
                g.set("max_iter", vec![I(1_000_000)]).set("metric", metrics()).set("norm", vec![s("median")]);
            }
            Jpca | Sa => {
                g.set("n_components", ks());
            }
            Tca => {
                g.set("kernel", vec![s("rbf")]).set("mu", vec![I(10), I(100)]).set("n_components", ks());
            }
            Coral => {
                g.set("assume_centered", vec![B(false), B(true)]).set("reg", vec![s("auto")]);
            }
            MmdTarS => {
                let mut gm = gammas();
                gm.push(N);
                g.set("gamma", gm).set("max_iter", vec![I(1000)]).set("reg", vec![F(1e-6)]).set("tol", vec![F(1e-6)]);
            }
            ClassRegOt => {
                g.set("max_inner_iter", vec![I(1000)]).set("max_iter", vec![I(10)]).set("metric", metrics());
                g.set("norm", vec![s("lpl1")]).set("tol", vec![F(1e-6)]);
                let pairs = [0.1, 0.5, 1.0].iter().map(|&v| ParamValue::List(vec![F(v), F(v)])).collect();
                g.set("reg_cl,reg_e", pairs);
            }
            DensRw => {
                let mut bw: Vec<ParamValue> = [0.01, 0.1, 1.0, 10.0, 100.0].into_iter().map(F).collect();
                bw.extend([s("scott"), s("silverman")]);
                g.set("bandwidth", bw);
            }
            DiscRw => {
                g.set("domain_classifier", vec![s("LR"), s("SVC"), s("XGB")]);
            }
            GaussRw => {
                g.set("reg", vec![s("auto")]);
            }
            Dasvm => {
                g.set("max_iter", vec![I(200)]);
            }
            Jdot => {
                g.set("alpha", [0.1, 0.3, 0.5, 0.7, 0.9].into_iter().map(F).collect());
                g.set("n_iter_max", vec![I(100)]).set("thr_weights", vec![F(1e-7)]).set("tol", vec![F(1e-6)]);
            }
            EntOt => {
                g.set("max_iter", vec![I(1000)]).set("metric", metrics()).set("norm", vec![s("median")]);
                g.set("reg_e", vec![F(0.1), F(0.5), F(1.0)]).set("tol", vec![F(1e-6)]);
            }
            LinOt => {
                g.set("bias", vec![B(true), B(false)]).set("reg", [1e-8, 1e-6, 0.1, 1.0, 10.0].into_iter().map(F).collect());
            }
            Tsl => {
                g.set("base_method", vec![s("flda")]).set("length_scale", vec![I(2)]).set("max_iter", vec![I(300)]);
                g.set("mu", vec![F(0.1), I(1), I(10)]).set("n_components", ks()).set("reg", vec![F(1e-4)]);
                g.set("tol", vec![F(1e-4)]);
            }
            MmdLs => {
                g.set("gamma", vec![F(0.01), F(0.1), I(1), I(10), I(100)]).set("max_iter", vec![I(20)]);
                g.set("reg_k", vec![F(1e-8)]).set("reg_m", vec![F(1e-8)]).set("tol", vec![F(1e-5)]);
            }
            OtLabelProp => {
                g.set("metric", metrics());
                let pairs = vec![
                    ParamValue::List(vec![I(10000), N]),
                    ParamValue::List(vec![I(100), F(0.1)]),
                    ParamValue::List(vec![I(100), I(1)]),
                ];
                g.set("n_iter_max,reg", pairs);
            }
        }
        g
    }
}

/// A scalar hyperparameter value. Strings `"none"`/`"None"` read as null so
/// TOML configs can express it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ParamValue>),
}

impl ParamValue {
    pub fn is_null(&self) -> bool {
        match self {
            ParamValue::Null => true,
            ParamValue::Str(s) => s.eq_ignore_ascii_case("none"),
            _ => false,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Float(v) => Some(v),
            ParamValue::Int(v) => Some(v as f64),
            _ => None,
        }
    }
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Null => write!(f, "None"),
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Str(s) => write!(f, "{s}"),
            ParamValue::List(v) => {
                let parts: Vec<String> = v.iter().map(|p| p.to_string()).collect();
                write!(f, "({})", parts.join(", "))
            }
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

/// Parameter name to candidate values. A key `"a,b"` couples several
/// parameters; each of its values is a list with one entry per name. Cells
/// enumerate keys in sorted order with the last key varying fastest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Grid(pub BTreeMap<String, Vec<ParamValue>>);

impl Grid {
    pub fn set(&mut self, key: &str, values: Vec<ParamValue>) -> &mut Self {
        self.0.insert(key.to_string(), values);
        self
    }

    pub fn cells(&self) -> Result<Vec<Params>> {
        let mut cells = vec![Params::new()];
        for (key, values) in &self.0 {
            if values.is_empty() {
                return Err(Error::EmptyGrid);
            }
            let names: Vec<&str> = key.split(',').map(str::trim).collect();
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for cell in &cells {
                for v in values {
                    let mut c = cell.clone();
                    if names.len() == 1 {
                        c.insert(names[0].to_string(), v.clone());
                    } else {
                        let parts = match v {
                            ParamValue::List(p) if p.len() == names.len() => p,
                            _ => return Err(Error::InvalidParam(format!("grid key {key} expects {}-tuples", names.len()))),
                        };
                        for (n, p) in names.iter().zip(parts) {
                            c.insert(n.to_string(), p.clone());
                        }
                    }
                    next.push(c);
                }
            }
            cells = next;
        }
        Ok(cells)
    }

    pub fn len(&self) -> usize {
        self.0.values().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads typed values out of a parameter cell and tracks which names were used.
struct Reader<'a> {
    params: &'a Params,
    used: BTreeSet<&'a str>,
}

impl<'a> Reader<'a> {
    fn new(params: &'a Params) -> Self {
        Self { params, used: BTreeSet::new() }
    }

    fn raw(&mut self, name: &'static str) -> Option<&'a ParamValue> {
        let (k, v) = self.params.get_key_value(name)?;
        self.used.insert(k.as_str());
        Some(v)
    }

    fn bad(name: &str, v: &ParamValue) -> Error {
        Error::InvalidParam(format!("{name} = {v}"))
    }

    fn f64_or(&mut self, name: &'static str, default: f64) -> Result<f64> {
        match self.raw(name) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| Self::bad(name, v)),
        }
    }

    fn usize_or(&mut self, name: &'static str, default: usize) -> Result<usize> {
        match self.raw(name) {
            None => Ok(default),
            Some(v) => match v.as_f64() {
                Some(x) if x >= 0.0 && x.fract() == 0.0 => Ok(x as usize),
                _ => Err(Self::bad(name, v)),
            },
        }
    }

    fn bool_or(&mut self, name: &'static str, default: bool) -> Result<bool> {
        match self.raw(name) {
            None => Ok(default),
            Some(ParamValue::Bool(b)) => Ok(*b),
            Some(v) => Err(Self::bad(name, v)),
        }
    }

    fn str_or(&mut self, name: &'static str, default: &'static str) -> Result<String> {
        match self.raw(name) {
            None => Ok(default.to_string()),
            Some(ParamValue::Str(s)) => Ok(s.clone()),
            Some(v) => Err(Self::bad(name, v)),
        }
    }

    /// Kernel width: a number, `auto`, `scale`, or null for `null_as`.
    fn gamma_or(&mut self, name: &'static str, default: Gamma, null_as: Gamma) -> Result<Gamma> {
        match self.raw(name) {
            None => Ok(default),
            Some(v) if v.is_null() => Ok(null_as),
            Some(ParamValue::Str(s)) if s == "auto" => Ok(Gamma::Auto),
            Some(ParamValue::Str(s)) if s == "scale" => Ok(Gamma::Scale),
            Some(v) => v.as_f64().filter(|g| *g > 0.0).map(Gamma::Value).ok_or_else(|| Self::bad(name, v)),
        }
    }

    fn opt_f64(&mut self, name: &'static str) -> Result<Option<f64>> {
        match self.raw(name) {
            None => Ok(None),
            Some(v) if v.is_null() => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| Self::bad(name, v)),
        }
    }

    fn metric(&mut self) -> Result<Metric> {
        match self.str_or("metric", "sqeuclidean")?.as_str() {
            "sqeuclidean" => Ok(Metric::Sqeuclidean),
            "cosine" => Ok(Metric::Cosine),
            "cityblock" => Ok(Metric::Cityblock),
            other => Err(Error::Unsupported(format!("metric {other}"))),
        }
    }

    fn cost_norm(&mut self) -> Result<CostNorm> {
        match self.raw("norm") {
            None => Ok(CostNorm::None),
            Some(v) if v.is_null() => Ok(CostNorm::None),
            Some(ParamValue::Str(s)) if s == "median" => Ok(CostNorm::Median),
            Some(v) => Err(Error::Unsupported(format!("cost normalization {v}"))),
        }
    }

    fn expect_str(&mut self, name: &'static str, allowed: &str) -> Result<()> {
        let v = self.str_or(name, "")?;
        if v.is_empty() || v == allowed {
            Ok(())
        } else {
            Err(Error::Unsupported(format!("{name} = {v}")))
        }
    }

    fn finish(self) -> Result<()> {
        let unused: Vec<&String> = self.params.keys().filter(|k| !self.used.contains(k.as_str())).collect();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("unused parameters {unused:?}")))
        }
    }
}

/// A fully typed grid cell.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodConfig {
    TrainSrc,
    TrainTgt,
    Reweight(RatioKind),
    Kliep { gamma: Gamma, n_centers: usize, tol: f64, max_iter: usize },
    Kmm { b: f64, gamma: Gamma, tol: f64, max_iter: usize },
    MmdTarS { gamma: Gamma, reg: f64, tol: f64, max_iter: usize },
    Coral { assume_centered: bool, reg: CoralReg },
    LinOt { reg: f64, bias: bool },
    MapOt { metric: Metric, norm: CostNorm },
    EntOt { metric: Metric, norm: CostNorm, reg_e: f64, tol: f64, max_iter: usize },
    ClassRegOt { metric: Metric, reg_e: f64, reg_cl: f64, tol: f64, max_iter: usize, max_inner_iter: usize },
    MmdLs { gamma: f64, reg_k: f64, reg_m: f64, tol: f64, max_iter: usize },
    Jpca { k: usize },
    Sa { k: usize },
    Tca { k: usize, mu: f64, gamma: Gamma },
    Tsl { k: usize, mu: f64, length_scale: f64, reg: f64, tol: f64, max_iter: usize },
    Jdot { alpha: f64, n_iter_max: usize, thr_weights: f64, tol: f64 },
    OtLabelProp { metric: Metric, reg: Option<f64>, n_iter_max: usize },
    Dasvm { max_iter: usize, step_fraction: f64 },
}

/// Default DASVM batch size as a fraction of the target sample count.
pub const DASVM_STEP_FRACTION: f64 = 0.05;

impl MethodConfig {
    pub fn parse(method: MethodId, params: &Params) -> Result<Self> {
        let mut r = Reader::new(params);
        use MethodId as M;
        let cfg = match method {
            M::TrainSrc => MethodConfig::TrainSrc,
            M::TrainTgt => MethodConfig::TrainTgt,
            M::DensRw => {
                let bandwidth = match r.raw("bandwidth") {
                    None => Bandwidth::Scott,
                    Some(ParamValue::Str(s)) if s == "scott" => Bandwidth::Scott,
                    Some(ParamValue::Str(s)) if s == "silverman" => Bandwidth::Silverman,
                    Some(v) => Bandwidth::Value(v.as_f64().filter(|h| *h > 0.0).ok_or_else(|| Reader::bad("bandwidth", v))?),
                };
                MethodConfig::Reweight(RatioKind::Kde { bandwidth })
            }
            M::DiscRw => {
                let classifier = match r.str_or("domain_classifier", "LR")?.as_str() {
                    "LR" => DomainClassifier::Lr,
                    "SVC" => DomainClassifier::Svc,
                    "XGB" => DomainClassifier::Xgb,
                    other => return Err(Error::Unsupported(format!("domain classifier {other}"))),
                };
                MethodConfig::Reweight(RatioKind::Discriminative { classifier })
            }
            M::GaussRw => {
                let reg = match r.raw("reg") {
                    None => None,
                    Some(ParamValue::Str(s)) if s == "auto" => None,
                    Some(v) => Some(v.as_f64().ok_or_else(|| Reader::bad("reg", v))?),
                };
                MethodConfig::Reweight(RatioKind::Gaussian { reg })
            }
            M::NnRw => MethodConfig::Reweight(RatioKind::NearestNeighbor { laplace_smoothing: r.bool_or("laplace_smoothing", true)? }),
            M::Kliep => {
                // gamma is always a single value per cell, so the inner CV has nothing to choose
                r.usize_or("cv", 5)?;
                if r.usize_or("random_state", 0)? != 0 {
                    return Err(Error::Unsupported("KLIEP center seed is fixed at 0".into()));
                }
                MethodConfig::Kliep {
                    gamma: r.gamma_or("gamma", Gamma::Scale, Gamma::Scale)?,
                    n_centers: r.usize_or("n_centers", 100)?,
                    tol: r.f64_or("tol", 1e-6)?,
                    max_iter: r.usize_or("max_iter", 1000)?,
                }
            }
            M::Kmm => {
                if r.bool_or("smooth_weights", false)? {
                    return Err(Error::Unsupported("KMM weight smoothing".into()));
                }
                MethodConfig::Kmm {
                    b: r.f64_or("B", 1000.0)?,
                    gamma: r.gamma_or("gamma", Gamma::Median, Gamma::Median)?,
                    tol: r.f64_or("tol", 1e-6)?,
                    max_iter: r.usize_or("max_iter", 1000)?,
                }
            }
            M::MmdTarS => MethodConfig::MmdTarS {
                gamma: r.gamma_or("gamma", Gamma::Median, Gamma::Median)?,
                reg: r.f64_or("reg", 1e-6)?,
                tol: r.f64_or("tol", 1e-6)?,
                max_iter: r.usize_or("max_iter", 1000)?,
            },
            M::Coral => {
                let reg = match r.raw("reg") {
                    None => CoralReg::Auto,
                    Some(ParamValue::Str(s)) if s == "auto" => CoralReg::Auto,
                    Some(v) => CoralReg::Value(v.as_f64().ok_or_else(|| Reader::bad("reg", v))?),
                };
                MethodConfig::Coral { assume_centered: r.bool_or("assume_centered", false)?, reg }
            }
            M::LinOt => MethodConfig::LinOt { reg: r.f64_or("reg", 1e-8)?, bias: r.bool_or("bias", true)? },
            M::MapOt => {
                // the network simplex has no pivot cap beyond its own termination
                r.usize_or("max_iter", 1_000_000)?;
                MethodConfig::MapOt { metric: r.metric()?, norm: r.cost_norm()? }
            }
            M::EntOt => MethodConfig::EntOt {
                metric: r.metric()?,
                norm: r.cost_norm()?,
                reg_e: r.f64_or("reg_e", 1.0)?,
                tol: r.f64_or("tol", 1e-6)?,
                max_iter: r.usize_or("max_iter", 1000)?,
            },
            M::ClassRegOt => {
                r.expect_str("norm", "lpl1")?;
                MethodConfig::ClassRegOt {
                    metric: r.metric()?,
                    reg_e: r.f64_or("reg_e", 1.0)?,
                    reg_cl: r.f64_or("reg_cl", 0.1)?,
                    tol: r.f64_or("tol", 1e-6)?,
                    max_iter: r.usize_or("max_iter", 10)?,
                    max_inner_iter: r.usize_or("max_inner_iter", 1000)?,
                }
            }
            M::MmdLs => MethodConfig::MmdLs {
                gamma: r.f64_or("gamma", 1.0)?,
                reg_k: r.f64_or("reg_k", 1e-8)?,
                reg_m: r.f64_or("reg_m", 1e-8)?,
                tol: r.f64_or("tol", 1e-5)?,
                max_iter: r.usize_or("max_iter", 20)?,
            },
            M::Jpca => MethodConfig::Jpca { k: r.usize_or("n_components", 2)? },
            M::Sa => MethodConfig::Sa { k: r.usize_or("n_components", 2)? },
            M::Tca => {
                r.expect_str("kernel", "rbf")?;
                MethodConfig::Tca {
                    k: r.usize_or("n_components", 2)?,
                    mu: r.f64_or("mu", 10.0)?,
                    gamma: r.gamma_or("gamma", Gamma::Auto, Gamma::Auto)?,
                }
            }
            M::Tsl => {
                r.expect_str("base_method", "flda")?;
                MethodConfig::Tsl {
                    k: r.usize_or("n_components", 2)?,
                    mu: r.f64_or("mu", 1.0)?,
                    length_scale: r.f64_or("length_scale", 2.0)?,
                    reg: r.f64_or("reg", 1e-4)?,
                    tol: r.f64_or("tol", 1e-4)?,
                    max_iter: r.usize_or("max_iter", 300)?,
                }
            }
            M::Jdot => MethodConfig::Jdot {
                alpha: r.f64_or("alpha", 0.5)?,
                n_iter_max: r.usize_or("n_iter_max", 100)?,
                thr_weights: r.f64_or("thr_weights", 1e-7)?,
                tol: r.f64_or("tol", 1e-6)?,
            },
            M::OtLabelProp => MethodConfig::OtLabelProp {
                metric: r.metric()?,
                reg: r.opt_f64("reg")?,
                n_iter_max: r.usize_or("n_iter_max", 10000)?,
            },
            M::Dasvm => MethodConfig::Dasvm {
                max_iter: r.usize_or("max_iter", 200)?,
                step_fraction: r.f64_or("step_fraction", DASVM_STEP_FRACTION)?,
            },
        };
        r.finish()?;
        Ok(cfg)
    }

    /// The configuration actually fitted when the component count exceeds
    /// the data, so that equivalent cells share one fit.
    pub fn effective(&self, d: usize, ns: usize, nt: usize) -> Self {
        let cap = |k: usize, lim: usize| k.min(lim).max(1);
        match *self {
            MethodConfig::Jpca { k } => MethodConfig::Jpca { k: cap(k, d.min(ns + nt - 1)) },
            MethodConfig::Sa { k } => MethodConfig::Sa { k: cap(k, d.min(ns.min(nt).saturating_sub(1))) },
            MethodConfig::Tsl { k, mu, length_scale, reg, tol, max_iter } => {
                MethodConfig::Tsl { k: cap(k, d), mu, length_scale, reg, tol, max_iter }
            }
            MethodConfig::Tca { k, mu, gamma } => MethodConfig::Tca { k: cap(k, ns + nt - 1), mu, gamma },
            ref other => other.clone(),
        }
    }
}

/// Training data of one fit. `yt` is read only by the target oracle.
#[derive(Debug, Clone, Copy)]
pub struct FitData<'a> {
    pub xs: &'a DMatrix<f64>,
    pub ys: &'a [i64],
    pub xt: &'a DMatrix<f64>,
    pub yt: Option<&'a [i64]>,
    pub classes: &'a [i64],
    pub base: EstimatorSpec,
}

/// How features reach the predictor on each side.
#[derive(Debug, Clone)]
pub enum Transform {
    Identity,
    /// Source rows are mapped, target rows pass through.
    Affine(AffineMap),
    /// Transported source rows; other source rows move with the displacement
    /// of their nearest training row.
    Transport { train: DMatrix<f64>, mapped: DMatrix<f64> },
    /// Source rows move with the parameters of their own label.
    LocationScale(LocationScaleMap),
    Projection(Projection),
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub transform: Transform,
    pub predictor: ProbPredictor,
    pub weights: Option<SampleWeights>,
    pub note: Option<String>,
}

impl FittedModel {
    pub fn source_features(&self, x: &DMatrix<f64>, y: &[i64]) -> Result<DMatrix<f64>> {
        match &self.transform {
            Transform::Identity => Ok(x.clone()),
            Transform::Affine(map) => map.apply(x),
            Transform::Transport { train, mapped } => nn_displacement(train, mapped, x),
            Transform::LocationScale(map) => map.apply(x, y),
            Transform::Projection(p) => p.project(x, Side::Source),
        }
    }

    pub fn target_features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.transform {
            Transform::Projection(p) => p.project(x, Side::Target),
            _ => Ok(x.clone()),
        }
    }

    pub fn predict_target(&self, x: &DMatrix<f64>) -> Result<PredictionSet> {
        self.predictor.predict_proba(&self.target_features(x)?)
    }

    pub fn predict_source(&self, x: &DMatrix<f64>, y: &[i64]) -> Result<PredictionSet> {
        self.predictor.predict_proba(&self.source_features(x, y)?)
    }
}

fn check_fit_data(data: &FitData) -> Result<()> {
    if data.xs.nrows() != data.ys.len() {
        return Err(Error::LengthMismatch(data.xs.nrows(), data.ys.len()));
    }
    if data.xs.ncols() != data.xt.ncols() {
        return Err(Error::LengthMismatch(data.xs.ncols(), data.xt.ncols()));
    }
    if data.ys.contains(&crate::MASKED) {
        return Err(Error::MaskedLabels);
    }
    Ok(())
}

fn with_predictor(transform: Transform, xs_adapted: &DMatrix<f64>, data: &FitData, w: Option<SampleWeights>) -> Result<FittedModel> {
    let predictor = estimators::fit(&data.base, xs_adapted, data.ys, w.as_ref().map(|w| w.values.as_slice()))?;
    let note = w.as_ref().and_then(|w| w.info.clone());
    Ok(FittedModel { transform, predictor, weights: w, note })
}

fn transport_model(train: &DMatrix<f64>, mapped: DMatrix<f64>, data: &FitData) -> Result<FittedModel> {
    let predictor = estimators::fit(&data.base, &mapped, data.ys, None)?;
    Ok(FittedModel { transform: Transform::Transport { train: train.clone(), mapped }, predictor, weights: None, note: None })
}

fn projection_model(ps: &DMatrix<f64>, p: Projection, data: &FitData) -> Result<FittedModel> {
    let note = p.warning.clone();
    let predictor = estimators::fit(&data.base, ps, data.ys, None)?;
    Ok(FittedModel { transform: Transform::Projection(p), predictor, weights: None, note })
}

fn direct(predictor: ProbPredictor, note: Option<String>) -> FittedModel {
    FittedModel { transform: Transform::Identity, predictor, weights: None, note }
}

/// Fits one grid cell on labeled source and unlabeled target data.
pub fn fit_method(cfg: &MethodConfig, data: &FitData) -> Result<FittedModel> {
    check_fit_data(data)?;
    let FitData { xs, ys, xt, .. } = *data;
    match *cfg {
        MethodConfig::TrainSrc => with_predictor(Transform::Identity, xs, data, None),
        MethodConfig::TrainTgt => {
            let yt = data.yt.ok_or(Error::MaskedLabels)?;
            Ok(direct(estimators::fit(&data.base, xt, yt, None)?, None))
        }
        MethodConfig::Reweight(kind) => with_predictor(Transform::Identity, xs, data, Some(density_ratio_weights(&kind, xs, xt)?)),
        MethodConfig::Kliep { gamma, n_centers, tol, max_iter } => {
            with_predictor(Transform::Identity, xs, data, Some(kliep_weights(xs, xt, gamma, n_centers, tol, max_iter)?))
        }
        MethodConfig::Kmm { b, gamma, tol, max_iter } => {
            with_predictor(Transform::Identity, xs, data, Some(kmm_weights(xs, xt, gamma, b, tol, max_iter)?))
        }
        MethodConfig::MmdTarS { gamma, reg, tol, max_iter } => {
            with_predictor(Transform::Identity, xs, data, Some(mmd_target_shift_weights(xs, ys, xt, gamma, reg, tol, max_iter)?))
        }
        MethodConfig::Coral { assume_centered, reg } => {
            let map = coral(xs, xt, reg, assume_centered)?;
            let moved = map.apply(xs)?;
            with_predictor(Transform::Affine(map), &moved, data, None)
        }
        MethodConfig::LinOt { reg, bias } => {
            let map = linear_ot(xs, xt, reg, bias)?;
            let moved = map.apply(xs)?;
            with_predictor(Transform::Affine(map), &moved, data, None)
        }
        MethodConfig::MapOt { metric, norm } => {
            let c = cost_matrix(xs, xt, metric, norm)?.c;
            let plan = exact_ot_plan(&c, &uniform(xs.nrows()), &uniform(xt.nrows()))?;
            transport_model(xs, barycentric_map(&plan, xt)?, data)
        }
        MethodConfig::EntOt { metric, norm, reg_e, tol, max_iter } => {
            let c = cost_matrix(xs, xt, metric, norm)?.c;
            let plan = sinkhorn_plan(&c, &uniform(xs.nrows()), &uniform(xt.nrows()), reg_e, tol, max_iter)?;
            let mut m = transport_model(xs, barycentric_map(&plan, xt)?, data)?;
            if !plan.converged {
                m.note = Some("sinkhorn did not reach tolerance".into());
            }
            Ok(m)
        }
        MethodConfig::ClassRegOt { metric, reg_e, reg_cl, tol, max_iter, max_inner_iter } => {
            let c = cost_matrix(xs, xt, metric, CostNorm::None)?.c;
            let (a, b) = (uniform(xs.nrows()), uniform(xt.nrows()));
            let plan = class_reg_ot_plan(&c, ys, &a, &b, reg_e, reg_cl, max_iter, max_inner_iter, tol)?;
            transport_model(xs, barycentric_map(&plan, xt)?, data)
        }
        MethodConfig::MmdLs { gamma, reg_k, reg_m, tol, max_iter } => {
            let map = mmd_ls_map(xs, ys, xt, gamma, reg_k, reg_m, tol, max_iter)?;
            let moved = map.apply(xs, ys)?;
            let mut m = with_predictor(Transform::LocationScale(map), &moved, data, None)?;
            if let Transform::LocationScale(map) = &m.transform {
                if !map.converged {
                    m.note = Some("location-scale fit hit the iteration cap".into());
                }
            }
            Ok(m)
        }
        MethodConfig::Jpca { k } => {
            let (ps, _, p) = jpca_adapt(xs, xt, k)?;
            projection_model(&ps, p, data)
        }
        MethodConfig::Sa { k } => {
            let (ps, _, p) = sa_adapt(xs, xt, k)?;
            projection_model(&ps, p, data)
        }
        MethodConfig::Tca { k, mu, gamma } => {
            let g = gamma.resolve(&crate::dataset::vstack(xs, xt))?;
            let p = TcaBasis::new(xs, xt, mu, g, k)?.projection(k);
            let ps = p.project(xs, Side::Source)?;
            projection_model(&ps, p, data)
        }
        MethodConfig::Tsl { k, mu, length_scale, reg, tol, max_iter } => {
            let res = tsl_adapt(xs, ys, xt, k, mu, length_scale, reg, max_iter, tol)?;
            let mut m = projection_model(&res.projected_source, res.projection, data)?;
            if !res.converged && m.note.is_none() {
                m.note = Some("TSL hit the iteration cap".into());
            }
            Ok(m)
        }
        MethodConfig::Jdot { alpha, n_iter_max, thr_weights, tol } => {
            let res = jdot_fit(xs, ys, xt, alpha, n_iter_max, thr_weights, tol, &data.base)?;
            let note = res.nondecreasing.then(|| "objective increased; stopped early".to_string());
            Ok(direct(res.predictor, note))
        }
        MethodConfig::OtLabelProp { metric, reg, n_iter_max } => {
            let res = ot_label_prop(xs, ys, xt, data.classes, metric, reg, n_iter_max)?;
            let labels = res.predictions.labels();
            let q = one_hot(&labels, data.classes)?;
            let featurizer = Featurizer::new(&data.base, xt)?;
            let predictor = fit_soft(&data.base, featurizer, xt, &q, data.classes, None, None)?;
            let note = (!res.zero_mass.is_empty()).then(|| format!("{} target rows without transported mass", res.zero_mass.len()));
            Ok(direct(predictor, note))
        }
        MethodConfig::Dasvm { max_iter, step_fraction } => {
            let res = dasvm_fit(xs, ys, xt, max_iter, step_fraction, &data.base)?;
            Ok(direct(res.predictor, None))
        }
    }
}

/// Fits every cell of a grid on the same data. Cells that are equivalent
/// after clipping share one fit, and TCA shares one eigendecomposition per
/// `(mu, gamma)`. `stop` is polled between fits; cells not reached report
/// `Err(Error::Unsupported("stopped"))`. Returns the results and the number
/// of fits performed.
pub fn fit_cells(
    cfgs: &[MethodConfig],
    data: &FitData,
    stop: &dyn Fn() -> bool,
) -> (Vec<Result<Arc<FittedModel>>>, usize) {
    let d = data.xs.ncols();
    let (ns, nt) = (data.xs.nrows(), data.xt.nrows());
    let effective: Vec<MethodConfig> = cfgs.iter().map(|c| c.effective(d, ns, nt)).collect();
    let mut done: HashMap<String, Result<Arc<FittedModel>>> = HashMap::new();
    let mut tca: HashMap<String, Result<Arc<TcaBasis>>> = HashMap::new();
    let mut fits = 0;
    let mut out = Vec::with_capacity(cfgs.len());
    for cfg in &effective {
        let key = format!("{cfg:?}");
        if let Some(r) = done.get(&key) {
            out.push(r.clone());
            continue;
        }
        if stop() {
            out.push(Err(Error::Unsupported("stopped".into())));
            continue;
        }
        let result = match *cfg {
            MethodConfig::Tca { k, mu, gamma } => {
                let k_max = effective
                    .iter()
                    .filter_map(|c| match *c {
                        MethodConfig::Tca { k, mu: m, gamma: g } if m == mu && g == gamma => Some(k),
                        _ => None,
                    })
                    .max()
                    .unwrap_or(k);
                let bkey = format!("{mu:?}/{gamma:?}");
                let basis = tca
                    .entry(bkey)
                    .or_insert_with(|| {
                        check_fit_data(data)?;
                        let g = gamma.resolve(&crate::dataset::vstack(data.xs, data.xt))?;
                        TcaBasis::new(data.xs, data.xt, mu, g, k_max).map(Arc::new)
                    })
                    .clone();
                basis.and_then(|b| {
                    let p = b.projection(k);
                    let ps = p.project(data.xs, Side::Source)?;
                    projection_model(&ps, p, data).map(Arc::new)
                })
            }
            _ => fit_method(cfg, data).map(Arc::new),
        };
        fits += 1;
        done.insert(key, result.clone());
        out.push(result);
    }
    (out, fits)
}

/// Validation data of one inner split. `yt_val` is the oracle channel for the
/// supervised scorer and nothing else.
#[derive(Debug, Clone, Copy)]
pub struct ValidationData<'a> {
    pub xs_val: &'a DMatrix<f64>,
    pub ys_val: &'a [i64],
    pub xt_val: &'a DMatrix<f64>,
    pub yt_val: Option<&'a [i64]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerSettings {
    pub snd_temperature: f64,
    pub mixval_lambda: f64,
    pub mixval_seed: u64,
}

impl Default for ScorerSettings {
    fn default() -> Self {
        Self { snd_temperature: scorers::SND_TEMPERATURE, mixval_lambda: scorers::MIXVAL_LAMBDA, mixval_seed: 0 }
    }
}

/// Evaluates `scorers` for one fitted cell. CircV refits `cfg` with the
/// domains swapped on the validation sets.
pub fn score_cell(
    model: &FittedModel,
    cfg: &MethodConfig,
    train: &FitData,
    val: &ValidationData,
    wanted: &[ScorerId],
    settings: &ScorerSettings,
) -> Vec<Result<ScorerValue>> {
    let target_pred = model.predict_target(val.xt_val);
    let source_pred = if wanted.iter().any(|s| matches!(s, ScorerId::Iw | ScorerId::Dev)) {
        Some(model.predict_source(val.xs_val, val.ys_val))
    } else {
        None
    };
    let mut weights: Option<Result<SampleWeights>> = None;
    let mut iw_weights = || -> Result<SampleWeights> {
        weights
            .get_or_insert_with(|| {
                let fs = model.source_features(val.xs_val, val.ys_val)?;
                let ft = model.target_features(val.xt_val)?;
                scorers::validation_weights(&fs, &ft)
            })
            .clone()
    };
    let fail = |e: &Error| Err(e.clone());
    wanted
        .iter()
        .map(|id| match id {
            ScorerId::Supervised => {
                let yt = val.yt_val.ok_or(Error::MaskedLabels)?;
                target_pred.as_ref().map_err(Clone::clone).and_then(|p| scorers::score_supervised(p, yt))
            }
            ScorerId::Iw | ScorerId::Dev => {
                let pred = match source_pred.as_ref().expect("computed above") {
                    Ok(p) => p,
                    Err(e) => return fail(e),
                };
                let w = iw_weights()?;
                if *id == ScorerId::Iw {
                    scorers::score_iw(pred, val.ys_val, &w)
                } else {
                    scorers::score_dev(pred, val.ys_val, &w)
                }
            }
            ScorerId::Pe => target_pred.as_ref().map_err(Clone::clone).and_then(scorers::score_pe),
            ScorerId::Snd => target_pred.as_ref().map_err(Clone::clone).and_then(|p| scorers::score_snd(p, settings.snd_temperature)),
            ScorerId::MixVal => scorers::score_mixval(
                |x: &DMatrix<f64>| model.predict_target(x).map(|p| p.labels()),
                val.xt_val,
                settings.mixval_lambda,
                settings.mixval_seed,
            ),
            ScorerId::CircV => {
                let forward = match target_pred.as_ref() {
                    Ok(p) => p.labels(),
                    Err(e) => return fail(e),
                };
                scorers::score_circv(&forward, val.ys_val, |pseudo| {
                    let back = FitData { xs: val.xt_val, ys: pseudo, xt: val.xs_val, yt: None, classes: train.classes, base: train.base };
                    // the target oracle has no backward counterpart without labels
                    let back_cfg = if *cfg == MethodConfig::TrainTgt { MethodConfig::TrainSrc } else { cfg.clone() };
                    let m = fit_method(&back_cfg, &back)?;
                    let dummy = vec![0; val.xs_val.nrows()];
                    Ok(m.predict_target(val.xs_val).map(|p| p.labels()).unwrap_or(dummy))
                })
            }
        })
        .collect()
}
