use crate::attention::attention_map_on;
use crate::error::{DotError, Result};
use crate::graph::{knn_graph, supervised_graph, AdjacencyGraph};
use crate::numeric::{FeatureMatrix, Matrix, Tape, Var};

use super::config::TrainConfig;
use super::net::ClassifierHead;
use super::params::{ModelParams, ParamVars};

/// Mean cross-entropy of `C(F̂s)` against integer labels.
pub fn tce_loss(fhat_s: &FeatureMatrix, labels: &[usize], c: &ClassifierHead) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.constant(fhat_s.clone());
    let vars = c.register(&mut tape);
    let z = c.logits_on(&mut tape, f, &vars)?;
    let l = tape.softmax_cross_entropy(z, labels)?;
    Ok(tape.value(l).item())
}

/// The four objective terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub tce: f64,
    pub ent: f64,
    pub target_lpp: f64,
    pub source_lpp: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [
            self.tce,
            self.ent,
            self.target_lpp,
            self.source_lpp,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Tape handles of the objective terms.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub tce: Var,
    pub ent: Var,
    pub target_lpp: Var,
    pub source_lpp: Var,
    pub total: Var,
}

impl ObjectiveVars {
    pub fn values(&self, tape: &Tape) -> LossTerms {
        LossTerms {
            tce: tape.value(self.tce).item(),
            ent: tape.value(self.ent).item(),
            target_lpp: tape.value(self.target_lpp).item(),
            source_lpp: tape.value(self.source_lpp).item(),
            total: tape.value(self.total).item(),
        }
    }
}

/// One labeled source batch, one target batch and the graphs used by the
/// locality terms.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub xs: &'a Matrix,
    pub ys: &'a [usize],
    pub xt: &'a Matrix,
    /// kNN graph over the rows of `xt`.
    pub target_graph: &'a AdjacencyGraph,
    /// Same-label graph over the rows of `xs`.
    pub source_graph: &'a AdjacencyGraph,
}

/// Records `L = L_tce + λ1 L_ent + λ2 L_t + λ3 L_s` on `tape`.
///
/// `F̂s = softmax(Fs Ftᵀ/√d₂) Ft`; `L_tce` is the cross-entropy of `C(F̂s)`,
/// `L_ent` the mean entropy of `C(Ft)`, `L_t` the kNN locality term on `Ft`
/// and `L_s` the same-label locality term on `F̂s`. Terms with zero weight are
/// still evaluated but left out of the sum.
pub fn record_objective(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ParamVars,
    input: &ObjectiveInputs<'_>,
    config: &TrainConfig,
) -> Result<ObjectiveVars> {
    if input.xs.rows() == 0 || input.xt.rows() == 0 {
        return Err(DotError::Input("objective needs nonempty batches".into()));
    }
    let xs = tape.constant(input.xs.clone());
    let xt = tape.constant(input.xt.clone());
    let fs = params.source.forward_on(tape, xs, &vars.source)?;
    let ft = params.target.forward_on(tape, xt, &vars.target)?;
    let a = attention_map_on(tape, fs, ft)?;
    let fhat = tape.matmul(a, ft)?;

    let zs = params.classifier.logits_on(tape, fhat, &vars.classifier)?;
    let tce = tape.softmax_cross_entropy(zs, input.ys)?;
    let zt = params.classifier.logits_on(tape, ft, &vars.classifier)?;
    let pt = tape.row_softmax(zt, 1.0)?;
    let ent = tape.entropy(pt);

    let lpp = |tape: &mut Tape, x: Var, g: &AdjacencyGraph| -> Result<Var> {
        if tape.value(x).rows() != g.n() {
            return Err(DotError::shape(
                "record_objective",
                tape.value(x).shape_str(),
                format!("graph on {} nodes", g.n()),
            ));
        }
        let l = tape.lpp(x, g.edges())?;
        Ok(if config.normalize_lpp && g.weight_sum() > 0 {
            tape.scale(l, 1.0 / g.weight_sum() as f64)
        } else {
            l
        })
    };
    let target_lpp = lpp(tape, ft, input.target_graph)?;
    let source_lpp = lpp(tape, fhat, input.source_graph)?;

    let mut total = tce;
    for (w, term) in [
        (config.lambda1, ent),
        (config.lambda2, target_lpp),
        (config.lambda3, source_lpp),
    ] {
        if w != 0.0 {
            let s = tape.scale(term, w);
            total = tape.add(total, s)?;
        }
    }
    Ok(ObjectiveVars {
        tce,
        ent,
        target_lpp,
        source_lpp,
        total,
    })
}

/// Objective on a pair of batches, building the target kNN graph from the
/// batch's current target features and the source graph from `ys`.
pub fn total_loss(
    xs: &Matrix,
    ys: &[usize],
    xt: &Matrix,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<LossTerms> {
    let ft = params.target.forward(xt)?;
    let target_graph = batch_knn_graph(&ft, config.knn_k)?;
    let source_graph = supervised_graph(ys);
    let input = ObjectiveInputs {
        xs,
        ys,
        xt,
        target_graph: &target_graph,
        source_graph: &source_graph,
    };
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    Ok(record_objective(&mut tape, params, &vars, &input, config)?.values(&tape))
}

/// kNN graph with `k` capped at `n − 1`; a single point has no edges.
pub(crate) fn batch_knn_graph(f: &FeatureMatrix, k: usize) -> Result<AdjacencyGraph> {
    if f.rows() < 2 {
        return Ok(AdjacencyGraph::empty(f.rows()));
    }
    knn_graph(f, k.min(f.rows() - 1))
}
