use serde::{Deserialize, Serialize};

use crate::error::{DotError, Result};
use crate::numeric::{row_softmax, FeatureMatrix, Matrix, Tape, Var};
use crate::rng::Rng64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, m: Matrix) -> Matrix {
        match self {
            Activation::Identity => m,
            Activation::Tanh => m.map(f64::tanh),
            Activation::Relu => m.map(|v| v.max(0.0)),
        }
    }

    fn apply_on(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Tanh => tape.tanh(v),
            Activation::Relu => tape.relu(v),
        }
    }
}

/// Fully connected layer `act(x · W + b)` with `W: in × out`, `b: 1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(d_in: usize, d_out: usize, activation: Activation, rng: &mut Rng64) -> Self {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt();
        let w = (0..d_in * d_out)
            .map(|_| (2.0 * rng.uniform() - 1.0) * limit)
            .collect();
        DenseLayer {
            weight: Matrix::from_vec(d_in, d_out, w),
            bias: Matrix::zeros(1, d_out),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Stack of dense layers mapping backbone features to the attention space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionNet {
    layers: Vec<DenseLayer>,
}

impl ProjectionNet {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DotError::Parameter("projection net needs a layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.output_dim()) {
                return Err(DotError::shape(
                    "ProjectionNet",
                    format!("layer {k} weight {}", l.weight.shape_str()),
                    format!("bias {}", l.bias.shape_str()),
                ));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(DotError::Input(format!(
                    "layer {k} has non-finite parameters"
                )));
            }
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(DotError::shape(
                    "ProjectionNet",
                    w[0].weight.shape_str(),
                    w[1].weight.shape_str(),
                ));
            }
        }
        Ok(ProjectionNet { layers })
    }

    /// `d_in → hidden (tanh) → d_out (linear)`.
    pub fn two_layer(d_in: usize, hidden: usize, d_out: usize, rng: &mut Rng64) -> Self {
        ProjectionNet {
            layers: vec![
                DenseLayer::glorot(d_in, hidden, Activation::Tanh, rng),
                DenseLayer::glorot(hidden, d_out, Activation::Identity, rng),
            ],
        }
    }

    /// Single linear layer with identity weights and zero bias.
    pub fn identity(d: usize) -> Self {
        ProjectionNet {
            layers: vec![DenseLayer {
                weight: Matrix::identity(d),
                bias: Matrix::zeros(1, d),
                activation: Activation::Identity,
            }],
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(DotError::shape(
                "project",
                format!("input width {cols}"),
                format!("net input width {}", self.input_dim()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check_input(x.cols())?;
        let mut h = x.clone();
        for l in &self.layers {
            h = l.activation.apply(h.matmul(&l.weight)?.add_row(&l.bias)?);
        }
        Ok(h)
    }

    /// Forward pass recorded on `tape`; `vars` come from [`Self::register`].
    pub fn forward_on(&self, tape: &mut Tape, x: Var, vars: &[Var]) -> Result<Var> {
        self.check_input(tape.value(x).cols())?;
        let mut h = x;
        for (l, wb) in self.layers.iter().zip(vars.chunks_exact(2)) {
            let z = tape.matmul(h, wb[0])?;
            let z = tape.add_row(z, wb[1])?;
            h = l.activation.apply_on(tape, z);
        }
        Ok(h)
    }

    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| [tape.param(l.weight.clone()), tape.param(l.bias.clone())])
            .collect()
    }

    /// Weight, bias, weight, bias, ... in layer order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn same_architecture(&self, other: &ProjectionNet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.activation == b.activation)
    }
}

/// Linear layer followed by a row softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl ClassifierHead {
    pub fn new(weight: Matrix, bias: Matrix) -> Result<Self> {
        if weight.cols() < 2 {
            return Err(DotError::Parameter(format!(
                "classifier needs at least 2 classes, got {}",
                weight.cols()
            )));
        }
        if bias.shape() != (1, weight.cols()) {
            return Err(DotError::shape(
                "ClassifierHead",
                weight.shape_str(),
                bias.shape_str(),
            ));
        }
        Ok(ClassifierHead { weight, bias })
    }

    pub fn glorot(d_in: usize, classes: usize, rng: &mut Rng64) -> Result<Self> {
        let l = DenseLayer::glorot(d_in, classes, Activation::Identity, rng);
        ClassifierHead::new(l.weight, l.bias)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weight.cols()
    }

    pub fn logits(&self, f: &FeatureMatrix) -> Result<Matrix> {
        f.matmul(&self.weight)?.add_row(&self.bias)
    }

    pub fn probabilities(&self, f: &FeatureMatrix) -> Result<Matrix> {
        row_softmax(&self.logits(f)?, 1.0)
    }

    pub fn logits_on(&self, tape: &mut Tape, f: Var, vars: &[Var]) -> Result<Var> {
        let z = tape.matmul(f, vars[0])?;
        tape.add_row(z, vars[1])
    }

    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        vec![
            tape.param(self.weight.clone()),
            tape.param(self.bias.clone()),
        ]
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_net_is_identity() {
        let x = Matrix::new(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 7.0]).unwrap();
        assert_eq!(ProjectionNet::identity(3).forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_net_gives_zero() {
        let mut rng = Rng64::seed(0);
        let mut net = ProjectionNet::two_layer(3, 4, 2, &mut rng);
        for t in net.tensors_mut() {
            *t = Matrix::zeros(t.rows(), t.cols());
        }
        let x = Matrix::filled(5, 3, 2.0);
        assert_eq!(net.forward(&x).unwrap(), Matrix::zeros(5, 2));
    }

    #[test]
    fn two_layer_matches_composition() {
        let mut rng = Rng64::seed(4);
        let net = ProjectionNet::two_layer(3, 5, 2, &mut rng);
        let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.normal()).collect());
        let out = net.forward(&x).unwrap();
        let (l0, l1) = (&net.layers()[0], &net.layers()[1]);
        for i in 0..4 {
            let mut h = [0.0; 5];
            for (j, hj) in h.iter_mut().enumerate() {
                let z: f64 = (0..3)
                    .map(|k| x.get(i, k) * l0.weight.get(k, j))
                    .sum::<f64>()
                    + l0.bias.get(0, j);
                *hj = z.tanh();
            }
            for j in 0..2 {
                let z: f64 =
                    (0..5).map(|k| h[k] * l1.weight.get(k, j)).sum::<f64>() + l1.bias.get(0, j);
                assert!((out.get(i, j) - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let net = ProjectionNet::identity(3);
        assert!(matches!(
            net.forward(&Matrix::zeros(2, 4)),
            Err(DotError::Shape { .. })
        ));
    }

    #[test]
    fn new_checks_chaining() {
        let mut rng = Rng64::seed(1);
        let a = DenseLayer::glorot(3, 4, Activation::Tanh, &mut rng);
        let b = DenseLayer::glorot(5, 2, Activation::Identity, &mut rng);
        assert!(ProjectionNet::new(vec![a, b]).is_err());
    }

    #[test]
    fn classifier_needs_two_classes() {
        assert!(ClassifierHead::new(Matrix::zeros(3, 1), Matrix::zeros(1, 1)).is_err());
    }
}
