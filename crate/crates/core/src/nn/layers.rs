use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Xavier-uniform matrix: entries in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let a = libm::sqrt(6.0 / (rows + cols) as f64);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::matrix(rows, cols, data).expect("rows*cols values")
}

/// Fully connected layer `W x + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, out_dim, in_dim));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Rebinds a layer to parameters already present in `store`.
    pub fn find(store: &ParamStore, name: &str) -> Result<Self> {
        let weight = find(store, &format!("{name}.weight"))?;
        let bias = find(store, &format!("{name}.bias"))?;
        let shape = store.get(weight).shape();
        if shape.len() != 2 || store.get(bias).shape() != [shape[0]] {
            return Err(Error::Checkpoint(format!("{name}: inconsistent linear shapes")));
        }
        Ok(Linear {
            weight,
            bias,
            in_dim: shape[1],
            out_dim: shape[0],
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let wx = g.matmul(w, x)?;
        g.add(wx, b)
    }
}

/// Lookup table with one row per action token.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub entries: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, entries: usize, dim: usize, rng: &mut R) -> Self {
        let table = store.add(format!("{name}.table"), xavier_uniform(rng, entries, dim));
        Embedding { table, entries, dim }
    }

    pub fn find(store: &ParamStore, name: &str) -> Result<Self> {
        let table = find(store, &format!("{name}.table"))?;
        let shape = store.get(table).shape();
        if shape.len() != 2 {
            return Err(Error::Checkpoint(format!("{name}: embedding must be a matrix")));
        }
        Ok(Embedding {
            table,
            entries: shape[0],
            dim: shape[1],
        })
    }

    pub fn lookup(&self, g: &mut Graph<'_>, index: usize) -> Result<NodeId> {
        let t = g.param(self.table);
        g.gather_row(t, index)
    }
}

/// Gated recurrent unit, Cho et al. formulation:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden_dim: usize,
    gates: [Gate; 3],
}

#[derive(Clone, Debug)]
struct Gate {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

const GATE_NAMES: [&str; 3] = ["update", "reset", "candidate"];

impl Gru {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let gates = GATE_NAMES.map(|gate| Gate {
            w: store.add(format!("{name}.{gate}.w"), xavier_uniform(rng, hidden_dim, input_dim)),
            u: store.add(format!("{name}.{gate}.u"), xavier_uniform(rng, hidden_dim, hidden_dim)),
            b: store.add(format!("{name}.{gate}.b"), Tensor::zeros(&[hidden_dim])),
        });
        Gru {
            input_dim,
            hidden_dim,
            gates,
        }
    }

    pub fn find(store: &ParamStore, name: &str) -> Result<Self> {
        let mut found = Vec::with_capacity(3);
        for gate in GATE_NAMES {
            found.push(Gate {
                w: find(store, &format!("{name}.{gate}.w"))?,
                u: find(store, &format!("{name}.{gate}.u"))?,
                b: find(store, &format!("{name}.{gate}.b"))?,
            });
        }
        let w = store.get(found[0].w).shape();
        if w.len() != 2 {
            return Err(Error::Checkpoint(format!("{name}: GRU weights must be matrices")));
        }
        let (hidden_dim, input_dim) = (w[0], w[1]);
        for gate in &found {
            let ok = store.get(gate.w).shape() == [hidden_dim, input_dim]
                && store.get(gate.u).shape() == [hidden_dim, hidden_dim]
                && store.get(gate.b).shape() == [hidden_dim];
            if !ok {
                return Err(Error::Checkpoint(format!("{name}: inconsistent GRU shapes")));
            }
        }
        let gates: [Gate; 3] = found.try_into().expect("three gates");
        Ok(Gru {
            input_dim,
            hidden_dim,
            gates,
        })
    }

    fn pre_activation(&self, g: &mut Graph<'_>, gate: usize, x: NodeId, h: NodeId) -> Result<NodeId> {
        let p = &self.gates[gate];
        let (w, u, b) = (g.param(p.w), g.param(p.u), g.param(p.b));
        let wx = g.matmul(w, x)?;
        let uh = g.matmul(u, h)?;
        let s = g.add(wx, uh)?;
        g.add(s, b)
    }

    pub fn step(&self, g: &mut Graph<'_>, x: NodeId, h: NodeId) -> Result<NodeId> {
        let (xs, hs) = (g.value(x).shape(), g.value(h).shape());
        if xs != [self.input_dim] || hs != [self.hidden_dim] {
            return Err(Error::Dimension(format!(
                "GRU({}, {}) given x {:?}, h {:?}",
                self.input_dim, self.hidden_dim, xs, hs
            )));
        }
        let za = self.pre_activation(g, 0, x, h)?;
        let z = g.sigmoid(za)?;
        let ra = self.pre_activation(g, 1, x, h)?;
        let r = g.sigmoid(ra)?;
        let rh = g.mul(r, h)?;
        let c = &self.gates[2];
        let (w, u, b) = (g.param(c.w), g.param(c.u), g.param(c.b));
        let wx = g.matmul(w, x)?;
        let urh = g.matmul(u, rh)?;
        let s = g.add(wx, urh)?;
        let s = g.add(s, b)?;
        let candidate = g.tanh(s)?;
        let delta = g.sub(candidate, h)?;
        let step = g.mul(z, delta)?;
        g.add(h, step)
    }
}

fn find(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .find(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
}
