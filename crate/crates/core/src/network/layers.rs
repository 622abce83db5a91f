use super::graph::{Graph, Var};
use super::params::{orthogonal, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::rng::RandomStream;

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

/// Dense layer whose weight rows are `g * v / |v|`.
#[derive(Debug, Clone)]
pub struct WeightNormDense {
    pub v: ParamId,
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    WeightNorm(WeightNormDense),
}

impl Layer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
        weight_norm: bool,
        rng: &mut RandomStream,
    ) -> Self {
        let w = orthogonal(outputs, inputs, gain, rng);
        if weight_norm {
            // Data-independent init: g = |v| so the effective weight equals v.
            let norms = (0..outputs)
                .map(|r| w.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect();
            let v = store.add(format!("{name}.v"), w);
            let g = store.add(format!("{name}.g"), Tensor::from_vec(1, outputs, norms));
            let b = store.add(format!("{name}.b"), Tensor::zeros(1, outputs));
            Layer::WeightNorm(WeightNormDense { v, g, b })
        } else {
            let w = store.add(format!("{name}.w"), w);
            let b = store.add(format!("{name}.b"), Tensor::zeros(1, outputs));
            Layer::Dense(Dense { w, b })
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let (w, b) = match self {
            Layer::Dense(d) => (g.param(d.w), d.b),
            Layer::WeightNorm(l) => {
                let (v, gain) = (g.param(l.v), g.param(l.g));
                (g.weight_norm(v, gain), l.b)
            }
        };
        let y = g.linear(x, w);
        let b = g.param(b);
        g.add_bias(y, b)
    }

    pub fn bias(&self) -> ParamId {
        match self {
            Layer::Dense(d) => d.b,
            Layer::WeightNorm(l) => l.b,
        }
    }
}

/// ELU between layers, linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// `sizes` lists input width, hidden widths, output width.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        weight_norm: bool,
        output_gain: f64,
        rng: &mut RandomStream,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { output_gain } else { std::f64::consts::SQRT_2 };
                Layer::new(store, &format!("{name}.{i}"), sizes[i], sizes[i + 1], gain, weight_norm, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, g: &mut Graph<'_>, mut x: Var) -> Var {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x);
            if i + 1 < n {
                x = g.elu(x);
            }
        }
        x
    }

    pub fn last(&self) -> &Layer {
        self.layers.last().expect("non-empty")
    }
}
