use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::rng::{self, Rng, StreamRng};
use crate::tensor::Tensor;

/// Stable identifier of a trainable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub u64);

/// A tensor with its gradient buffer and freeze flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub id: ParamId,
    pub value: Tensor,
    pub grad: Tensor,
    pub frozen: bool,
}

impl Parameter {
    pub fn new(id: ParamId, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            id,
            value,
            grad,
            frozen: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `U(-√(6/fan_in), √(6/fan_in))`, for layers followed by ReLU.
    HeUniform,
    /// `U(-√(6/(fan_in+fan_out)), ..)`
    XavierUniform,
    Zeros,
}

/// Hands out parameter ids and their seeded init streams.
#[derive(Clone, Debug)]
pub struct ParamAlloc {
    seed: u64,
    next: u64,
}

impl ParamAlloc {
    pub fn new(seed: u64) -> Self {
        Self { seed, next: 0 }
    }

    /// Starts ids at `base`, for building parts that must not collide
    /// with ids already handed out elsewhere.
    pub fn with_base(seed: u64, base: u64) -> Self {
        Self { seed, next: base }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_id(&mut self) -> ParamId {
        let id = ParamId(self.next);
        self.next += 1;
        id
    }

    pub fn stream_for(&self, id: ParamId) -> StreamRng {
        rng::stream(self.seed, id.0)
    }

    /// Allocates a `[rows × cols]` parameter.
    pub fn matrix(&mut self, rows: usize, cols: usize, init: Init) -> Parameter {
        let id = self.next_id();
        let mut stream = self.stream_for(id);
        let bound = match init {
            Init::HeUniform => libm::sqrt(6.0 / rows as f64),
            Init::XavierUniform => libm::sqrt(6.0 / (rows + cols) as f64),
            Init::Zeros => 0.0,
        };
        let data = (0..rows * cols)
            .map(|_| {
                if bound == 0.0 {
                    0.0
                } else {
                    stream.gen_range(-bound..bound)
                }
            })
            .collect();
        Parameter::new(id, Tensor::new(&[rows, cols], data).expect("positive dims"))
    }

    /// Re-draws a parameter's value in place from its own stream.
    pub fn reinit(&self, param: &mut Parameter, init: Init) {
        let (rows, cols) = (param.value.rows(), param.value.cols());
        let mut fresh = ParamAlloc::with_base(self.seed, param.id.0).matrix(rows, cols, init);
        fresh.value = Tensor::new(param.value.shape(), fresh.value.into_data()).expect("same len");
        param.value = fresh.value;
        param.zero_grad();
    }
}

/// Anything that owns parameters.
pub trait Parameterized {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn set_frozen(&mut self, frozen: bool) {
        for p in self.params_mut() {
            p.frozen = frozen;
        }
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Copies gradients out of a backward pass into the parameter buffers.
    /// Frozen parameters keep a zero gradient.
    fn load_grads(&mut self, grads: &BTreeMap<ParamId, Tensor>) {
        for p in self.params_mut() {
            match grads.get(&p.id) {
                Some(g) if !p.frozen => p.grad.data_mut().copy_from_slice(g.data()),
                _ => p.zero_grad(),
            }
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}
