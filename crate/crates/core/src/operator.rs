use num_complex::Complex64 as C64;

use crate::error::Result;
use crate::field::BlockField;

/// A linear map applied column-wise to a block of right-hand sides.
pub trait LinearOperator {
    fn apply(&self, x: &BlockField, y: &mut BlockField) -> Result<()>;
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn apply(&self, x: &BlockField, y: &mut BlockField) -> Result<()> {
        (**self).apply(x, y)
    }
}

/// `y = alpha * x`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledIdentity(pub C64);

impl ScaledIdentity {
    pub fn identity() -> Self {
        Self(C64::new(1.0, 0.0))
    }
}

impl LinearOperator for ScaledIdentity {
    fn apply(&self, x: &BlockField, y: &mut BlockField) -> Result<()> {
        x.check_same_shape(y, "scaled identity")?;
        for (o, i) in y.data_mut().iter_mut().zip(x.data()) {
            *o = self.0 * i;
        }
        Ok(())
    }
}
