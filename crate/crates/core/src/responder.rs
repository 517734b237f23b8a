use crate::quantum_core::{QuantumState, RngStream, StateVector};

/// Anything that answers a challenge state with a response state.
pub trait Responder {
    fn respond(&mut self, challenge: &StateVector, rng: &mut RngStream) -> QuantumState;

    /// Whether the verifier may query repeatedly with fresh copies.
    fn requeryable(&self) -> bool {
        true
    }
}

/// Adapter turning a closure into a [`Responder`].
pub struct FnResponder<F> {
    f: F,
    requeryable: bool,
}

impl<F> FnResponder<F>
where
    F: FnMut(&StateVector, &mut RngStream) -> QuantumState,
{
    pub fn new(f: F) -> Self {
        FnResponder { f, requeryable: true }
    }

    pub fn single_shot(f: F) -> Self {
        FnResponder { f, requeryable: false }
    }
}

impl<F> Responder for FnResponder<F>
where
    F: FnMut(&StateVector, &mut RngStream) -> QuantumState,
{
    fn respond(&mut self, challenge: &StateVector, rng: &mut RngStream) -> QuantumState {
        (self.f)(challenge, rng)
    }

    fn requeryable(&self) -> bool {
        self.requeryable
    }
}

