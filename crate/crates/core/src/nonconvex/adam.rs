use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Moments shaped like the parameter slices with the given lengths.
    pub fn new(shapes: &[usize], lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) {
        assert_eq!(params.len(), self.m.len(), "parameter group count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient group count changed");
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), m.len(), "parameter shape changed");
            for (((pi, gi), mi), vi) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * *gi;
                *vi = b2 * *vi + (T::one() - b2) * *gi * *gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *pi -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
