use crate::error::Result;

/// A set of real-valued parameter tensors that an optimizer can update.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<&[f64]>;

    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    /// Same shapes, all zeros.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites every entry from a flat vector laid out as [`Parameters::flatten`].
    fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_parameters(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// A model trained by per-example gradient steps.
pub trait Trainable: Parameters {
    type Example;

    fn example_id(example: &Self::Example) -> &str;

    fn loss(&self, example: &Self::Example) -> Result<f64>;

    /// Loss and its gradient with respect to every parameter (same shapes as `self`).
    fn loss_and_grad(&self, example: &Self::Example) -> Result<(f64, Self)>;
}
