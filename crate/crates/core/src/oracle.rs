use crate::error::Result;
use crate::paramvec::ParamVector;

/// Something that returns a loss and its gradient at a parameter point.
///
/// Implementations count their own calls; the agent algorithms rely on the
/// count to report cost in gradient evaluations.
pub trait GradientOracle {
    fn dim(&self) -> usize;

    fn loss_and_grad(&mut self, params: &ParamVector) -> Result<(f64, ParamVector)>;

    /// Number of `loss_and_grad` calls made so far.
    fn calls(&self) -> u64;
}

impl<O: GradientOracle + ?Sized> GradientOracle for &mut O {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn loss_and_grad(&mut self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        (**self).loss_and_grad(params)
    }

    fn calls(&self) -> u64 {
        (**self).calls()
    }
}

/// Wraps a closure as an oracle, mostly for tests and quick experiments.
pub struct FnOracle<F> {
    dim: usize,
    calls: u64,
    f: F,
}

impl<F> FnOracle<F>
where
    F: FnMut(&ParamVector, u64) -> Result<(f64, ParamVector)>,
{
    /// `f` receives the parameters and the zero-based call index.
    pub fn new(dim: usize, f: F) -> Self {
        FnOracle { dim, calls: 0, f }
    }
}

impl<F> GradientOracle for FnOracle<F>
where
    F: FnMut(&ParamVector, u64) -> Result<(f64, ParamVector)>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss_and_grad(&mut self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        let idx = self.calls;
        self.calls += 1;
        (self.f)(params, idx)
    }

    fn calls(&self) -> u64 {
        self.calls
    }
}
