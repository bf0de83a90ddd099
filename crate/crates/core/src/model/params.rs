use crate::error::{DotError, Result};
use crate::numeric::{Matrix, Tape, Var};
use crate::rng::Rng64;

use super::net::{ClassifierHead, ProjectionNet};

/// Source projection `F_s`, target projection `F_t` and classifier `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub source: ProjectionNet,
    pub target: ProjectionNet,
    pub classifier: ClassifierHead,
    pub seed: u64,
}

/// Tape handles for one registration of [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub source: Vec<Var>,
    pub target: Vec<Var>,
    pub classifier: Vec<Var>,
}

impl ParamVars {
    /// In the order of [`ModelParams::tensors`].
    pub fn all(&self) -> Vec<Var> {
        [&self.source[..], &self.target[..], &self.classifier[..]].concat()
    }
}

impl ModelParams {
    /// Two-layer projection nets `d_in → hidden → d_feat` and a linear head
    /// over `classes`. The target net starts as a copy of the source net.
    pub fn init(
        d_in: usize,
        hidden: usize,
        d_feat: usize,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = Rng64::stream(seed, 0x1417);
        let source = ProjectionNet::two_layer(d_in, hidden, d_feat, &mut rng);
        let classifier = ClassifierHead::glorot(d_feat, classes, &mut rng)?;
        Ok(ModelParams {
            target: source.clone(),
            source,
            classifier,
            seed,
        })
    }

    pub fn new(
        source: ProjectionNet,
        target: ProjectionNet,
        classifier: ClassifierHead,
        seed: u64,
    ) -> Result<Self> {
        if source.output_dim() != target.output_dim() || source.input_dim() != target.input_dim() {
            return Err(DotError::shape(
                "ModelParams",
                format!("source net {}->{}", source.input_dim(), source.output_dim()),
                format!("target net {}->{}", target.input_dim(), target.output_dim()),
            ));
        }
        if classifier.input_dim() != target.output_dim() {
            return Err(DotError::shape(
                "ModelParams",
                format!("feature width {}", target.output_dim()),
                format!("classifier input {}", classifier.input_dim()),
            ));
        }
        Ok(ModelParams {
            source,
            target,
            classifier,
            seed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.target.input_dim()
    }

    /// Every trainable tensor exactly once: `θ_Fs`, then `θ_Ft`, then `θ_C`.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut t = self.source.tensors();
        t.extend(self.target.tensors());
        t.extend(self.classifier.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = self.source.tensors_mut();
        t.extend(self.target.tensors_mut());
        t.extend(self.classifier.tensors_mut());
        t
    }

    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            source: self.source.register(tape),
            target: self.target.register(tape),
            classifier: self.classifier.register(tape),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Overwrites `F_t` with a deep copy of `F_s`.
pub fn init_target_from_source(params: &mut ModelParams) -> Result<()> {
    if !params.source.same_architecture(&params.target) {
        return Err(DotError::shape(
            "init_target_from_source",
            "source net layout",
            "different target net layout",
        ));
    }
    params.target = params.source.clone();
    Ok(())
}
