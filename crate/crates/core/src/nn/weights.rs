use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand_distr::{Distribution, Normal};

use super::arch::ArchSpec;
use super::real::Real;
use crate::rng;

/// Position of one layer's kernel and bias inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlot {
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    pub fan_in: usize,
}

/// Flat offsets of every layer, convolutions first, each as kernel then bias.
pub fn layer_slots(arch: &ArchSpec) -> Vec<LayerSlot> {
    let mut slots = Vec::with_capacity(arch.conv_layers().len() + arch.fc_layers().len());
    let mut at = 0;
    let mut push = |w: usize, b: usize, fan_in: usize| {
        slots.push(LayerSlot { weight: at..at + w, bias: at + w..at + w + b, fan_in });
        at += w + b;
    };
    for c in arch.conv_layers() {
        push(c.in_channels * c.out_channels * c.kernel, c.out_channels, c.in_channels * c.kernel);
    }
    for f in arch.fc_layers() {
        push(f.in_features * f.out_features, f.out_features, f.in_features);
    }
    slots
}

/// AdamW first and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
}

impl<T: Real> Moments<T> {
    pub fn zeros(n: usize) -> Self {
        Self { first: vec![T::zero(); n], second: vec![T::zero(); n] }
    }
}

/// Parameters of a network together with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T = f32> {
    arch: ArchSpec,
    slots: Vec<LayerSlot>,
    pub params: Vec<T>,
    /// Number of optimizer steps applied so far.
    pub step: u64,
    pub moments: Option<Moments<T>>,
}

impl<T: Real> ModelWeights<T> {
    pub fn zeros(arch: ArchSpec) -> Self {
        let n = arch.param_count();
        Self::from_params(arch, vec![T::zero(); n]).expect("length matches")
    }

    pub fn from_params(arch: ArchSpec, params: Vec<T>) -> crate::Result<Self> {
        if params.len() != arch.param_count() {
            return Err(crate::Error::LengthMismatch { expected: arch.param_count(), got: params.len() });
        }
        let slots = layer_slots(&arch);
        Ok(Self { arch, slots, params, step: 0, moments: None })
    }

    /// He initialization: kernels from `Normal(0, sqrt(2 / fan_in))`, biases zero.
    /// Layer `l` draws from its own seeded stream.
    pub fn init(arch: ArchSpec, seed: u64) -> Self {
        let mut w = Self::zeros(arch);
        for (l, slot) in w.slots.iter().enumerate() {
            let std = (2.0 / slot.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut r = rng::stream(seed, rng::domain::INIT, l as u64);
            for p in &mut w.params[slot.weight.clone()] {
                *p = T::of(normal.sample(&mut r));
            }
        }
        w
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn layer_weight(&self, layer: usize) -> &[T] {
        &self.params[self.slots[layer].weight.clone()]
    }

    pub fn layer_bias(&self, layer: usize) -> &[T] {
        &self.params[self.slots[layer].bias.clone()]
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Converts parameters (and moments) to another scalar type.
    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        ModelWeights {
            arch: self.arch.clone(),
            slots: self.slots.clone(),
            params: conv(&self.params),
            step: self.step,
            moments: self.moments.as_ref().map(|m| Moments { first: conv(&m.first), second: conv(&m.second) }),
        }
    }
}
