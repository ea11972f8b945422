use crate::error::{cfg_err, dim_err, Result};
use crate::scalar::Scalar;
use crate::tape::{split_axis, CustomBackward, Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        const OP: &str = "concat";
        let Some(&first) = inputs.first() else {
            return Err(cfg_err(OP, "no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(cfg_err(OP, format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err(OP, format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::from_vec(&shape, data)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            OP,
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] || len == 0 {
            return Err(dim_err(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {xs:?}", start + len),
            ));
        }
        let (outer, total, inner) = split_axis(&xs, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        let src = self.value(x).data();
        for o in 0..outer {
            let b = (o * total + start) * inner;
            data.extend_from_slice(&src[b..b + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let value = Tensor::from_vec(&shape, data)?;
        self.push(value, Op::Narrow { x, axis, start }, "narrow")
    }

    /// Gathers rows of the leading axis; indices may repeat.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || indices.iter().any(|&i| i >= xs[0]) {
            return Err(dim_err("index_select", format!("indices {indices:?} for {xs:?}")));
        }
        let row = xs[1..].iter().product::<usize>();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut shape = xs;
        shape[0] = indices.len();
        let value = Tensor::from_vec(&shape, data)?;
        self.push(
            value,
            Op::IndexSelect {
                x,
                indices: indices.to_vec(),
            },
            "index_select",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push(value, Op::Reshape { x }, "reshape")
    }

    /// Records an externally computed value with its own backward rule.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        rule: Box<dyn CustomBackward<T>>,
    ) -> Result<Var> {
        let name = rule.name();
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
            name,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_narrow_invert() {
        let mut tape = Tape::<f64>::new();
        let a = tape
            .input(Tensor::from_f64(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap(), true)
            .unwrap();
        let b = tape
            .input(Tensor::from_f64(&[2, 2, 2], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap(), true)
            .unwrap();
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), [2, 3, 2]);
        assert_eq!(
            tape.value(c).data(),
            &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]
        );
        let back = tape.narrow(c, 1, 1, 2).unwrap();
        assert_eq!(tape.value(back), tape.value(b));
    }

    #[test]
    fn index_select_scatters_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .input(Tensor::from_f64(&[3, 1], &[1.0, 2.0, 3.0]).unwrap(), true)
            .unwrap();
        let y = tape.index_select(x, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 1.0, 3.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let y = tape.constant(Tensor::zeros(&[3, 3])).unwrap();
        assert!(tape.concat(&[x, y], 1).is_err());
        assert!(tape.narrow(x, 1, 2, 2).is_err());
        assert!(tape.index_select(x, &[2]).is_err());
        assert!(tape.reshape(x, &[5]).is_err());
    }
}
