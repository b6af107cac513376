use super::{Tensor, TapeError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    /// Mean softmax cross-entropy; `probs` holds the row-wise softmax.
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Tensor,
    },
    Mean(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Linear record of primitive operations. Nodes are appended in evaluation
/// order, so every node's inputs precede it.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node reachable backwards from the seeded output.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.adjoints.get(var.0).and_then(Option::as_ref)
    }

    /// Adjoint of `var`, or zeros of `shape` when the output does not depend on it.
    pub fn wrt(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TapeError::Shape {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TapeError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2 || tb.shape() != [tx.shape()[1]] {
            return Err(TapeError::Shape {
                op: "add_bias",
                left: tx.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let n = tx.shape()[1];
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += *b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(Op::AddBias(x, bias), value))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Relu(x), value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Tanh(x), value)
    }

    /// Mean over rows of `-log softmax(logits)[label]`, computed with a
    /// log-sum-exp shift.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TapeError> {
        let t = self.value(logits);
        if t.shape().len() != 2 || t.shape()[0] != labels.len() || t.shape()[0] == 0 {
            return Err(TapeError::Shape {
                op: "softmax_cross_entropy",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let (m, c) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TapeError::Label { label: bad, classes: c });
        }
        let mut probs = vec![0.0; m * c];
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = t.row(i);
            let shift = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, z) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (z - shift).exp();
                sum += *p;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p /= sum;
            }
            total += shift + sum.ln() - row[label];
        }
        let value = Tensor::scalar(total / m as f64);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            value,
        ))
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var, TapeError> {
        let t = self.value(pred);
        if t.shape() != target.shape() || t.is_empty() {
            return Err(TapeError::Shape {
                op: "mse",
                left: t.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let sum: f64 = t
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, y)| (p - y) * (p - y))
            .sum();
        let value = Tensor::scalar(sum / t.len() as f64);
        Ok(self.push(
            Op::Mse {
                pred,
                target: target.clone(),
            },
            value,
        ))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TapeError> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(TapeError::Shape {
                op: "mean",
                left: t.shape().to_vec(),
                right: Vec::new(),
            });
        }
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        Ok(self.push(Op::Mean(x), value))
    }

    /// Reverse sweep from `output` seeded with `seed`, which must have the
    /// output's shape. Each node is visited once, in reverse recording order.
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<Gradients, TapeError> {
        if output.0 >= self.nodes.len() {
            return Err(TapeError::NotRecorded(output.0));
        }
        let out_shape = self.nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(TapeError::Shape {
                op: "backward seed",
                left: out_shape.to_vec(),
                right: seed.shape().to_vec(),
            });
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoints[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(adj) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    // dA = dC B^T, dB = A^T dC
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let drow = &adj.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            da[i * k + p] = dot(drow, brow);
                        }
                    }
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let arow = &ta.data()[i * k..(i + 1) * k];
                        let drow = &adj.data()[i * n..(i + 1) * n];
                        for (p, &av) in arow.iter().enumerate() {
                            for (o, &dv) in db[p * n..(p + 1) * n].iter_mut().zip(drow) {
                                *o += av * dv;
                            }
                        }
                    }
                    accumulate(&mut adjoints, *a, Tensor::new(vec![m, k], da)?);
                    accumulate(&mut adjoints, *b, Tensor::new(vec![k, n], db)?);
                }
                Op::AddBias(x, bias) => {
                    let n = adj.shape()[1];
                    let mut db = vec![0.0; n];
                    for row in adj.data().chunks(n) {
                        for (o, v) in db.iter_mut().zip(row) {
                            *o += *v;
                        }
                    }
                    accumulate(&mut adjoints, *bias, Tensor::vector(db));
                    accumulate(&mut adjoints, *x, adj.clone());
                }
                Op::Relu(x) => {
                    let tx = self.value(*x);
                    let data = adj
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                        .collect();
                    accumulate(&mut adjoints, *x, Tensor::new(tx.shape().to_vec(), data)?);
                }
                Op::Tanh(x) => {
                    let data = adj
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(d, y)| d * (1.0 - y * y))
                        .collect();
                    accumulate(
                        &mut adjoints,
                        *x,
                        Tensor::new(node.value.shape().to_vec(), data)?,
                    );
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let shape = self.value(*logits).shape().to_vec();
                    let (m, c) = (shape[0], shape[1]);
                    let scale = adj.data()[0] / m as f64;
                    let mut d = probs.clone();
                    for (i, &l) in labels.iter().enumerate() {
                        d[i * c + l] -= 1.0;
                    }
                    for v in &mut d {
                        *v *= scale;
                    }
                    accumulate(&mut adjoints, *logits, Tensor::new(shape, d)?);
                }
                Op::Mse { pred, target } => {
                    let tp = self.value(*pred);
                    let scale = 2.0 * adj.data()[0] / tp.len() as f64;
                    let d = tp
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(p, y)| scale * (p - y))
                        .collect();
                    accumulate(&mut adjoints, *pred, Tensor::new(tp.shape().to_vec(), d)?);
                }
                Op::Mean(x) => {
                    let tx = self.value(*x);
                    let v = adj.data()[0] / tx.len() as f64;
                    accumulate(
                        &mut adjoints,
                        *x,
                        Tensor::new(tx.shape().to_vec(), vec![v; tx.len()])?,
                    );
                }
            }
            adjoints[idx] = Some(adj);
        }
        Ok(Gradients { adjoints })
    }
}

fn accumulate(adjoints: &mut [Option<Tensor>], var: Var, grad: Tensor) {
    match &mut adjoints[var.0] {
        Some(existing) => existing.add_assign(&grad),
        slot @ None => *slot = Some(grad),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn square_at_three_has_gradient_six() {
        let mut tape = Tape::new();
        let x = tape.leaf(m(1, 1, &[3.0]));
        let y = tape.matmul(x, x).unwrap();
        let g = tape.backward(y, m(1, 1, &[1.0])).unwrap();
        assert_eq!(tape.value(y).data(), &[9.0]);
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn linear_map_gradient_is_coefficient() {
        for theta in [-2.0, 0.0, 0.7, 11.0] {
            let mut tape = Tape::new();
            let c = tape.leaf(m(1, 1, &[-1.5]));
            let x = tape.leaf(m(1, 1, &[theta]));
            let y = tape.matmul(c, x).unwrap();
            let g = tape.backward(y, m(1, 1, &[1.0])).unwrap();
            assert_eq!(g.get(x).unwrap().data(), &[-1.5]);
        }
    }

    #[test]
    fn identity_affine_layer() {
        let mut tape = Tape::new();
        let x = tape.leaf(m(1, 2, &[1.0, 2.0]));
        let w = tape.leaf(m(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        let h = tape.matmul(x, w).unwrap();
        let y = tape.add_bias(h, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn scalar_affine_layer() {
        let mut tape = Tape::new();
        let x = tape.leaf(m(1, 1, &[3.0]));
        let w = tape.leaf(m(1, 1, &[2.0]));
        let b = tape.leaf(Tensor::vector(vec![1.0]));
        let h = tape.matmul(x, w).unwrap();
        let y = tape.add_bias(h, b).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0]);
    }

    #[test]
    fn backward_on_empty_tape_errors() {
        let tape = Tape::new();
        assert!(matches!(
            tape.backward(Var(0), Tensor::scalar(1.0)),
            Err(TapeError::NotRecorded(0))
        ));
    }

    #[test]
    fn matmul_shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(m(2, 3, &[0.0; 6]));
        let b = tape.leaf(m(2, 3, &[0.0; 6]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let mut tape = Tape::new();
        let z = tape.leaf(m(1, 3, &[1000.0, 0.0, -1000.0]));
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        assert!(tape.value(l).data()[0].abs() < 1e-12);
        let g = tape.backward(l, Tensor::scalar(1.0)).unwrap();
        assert!(g.get(z).unwrap().is_finite());
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut tape = Tape::new();
        let z = tape.leaf(m(1, 2, &[0.0, 0.0]));
        assert!(matches!(
            tape.softmax_cross_entropy(z, &[2]),
            Err(TapeError::Label { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn mse_and_mean_gradients() {
        let mut tape = Tape::new();
        let p = tape.leaf(m(1, 2, &[1.0, 3.0]));
        let l = tape.mse(p, &m(1, 2, &[0.0, 1.0])).unwrap();
        assert_eq!(tape.value(l).data(), &[2.5]);
        let g = tape.backward(l, Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 2.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let y = tape.mean(x).unwrap();
        let g = tape.backward(y, Tensor::scalar(2.0)).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.5; 4]);
    }
}
