//! Linear layers and ReLU MLPs over a [`ParamStore`].

use rand::Rng;

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    /// Registers `{name}.w` `[din, dout]` and `{name}.b` `[dout]`, both
    /// uniform in `±1/sqrt(din)`.
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (din.max(1) as f64).sqrt();
        let w = store.add_uniform(format!("{name}.w"), &[din, dout], bound, rng)?;
        let b = store.add_uniform(format!("{name}.b"), &[dout], bound, rng)?;
        Ok(Linear { w, b, din, dout })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`; layers are named `{name}.0`, `{name}.1`, ...
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.relu(h)?;
            }
            h = layer.forward(g, store, h)?;
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.dout)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_shapes_and_bounds() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "m", &[4, 8, 2], &mut rng).unwrap();
        assert_eq!(store.len(), 4);
        assert_eq!(store.get(store.id("m.1.w").unwrap()).value.shape(), &[8, 2]);
        assert!(store.get(mlp.layers[0].w).value.data().iter().all(|v| v.abs() <= 0.5));
        assert_eq!(mlp.out_dim(), 2);

        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 5, 4]));
        let y = mlp.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[3, 5, 2]);
    }
}
