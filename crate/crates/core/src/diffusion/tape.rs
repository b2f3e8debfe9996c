//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and accumulates gradients. Spatial ops (`im2col3x3`,
//! `avgpool2`, `upsample2`) treat a matrix as one row per grid position.

use super::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatRows(Var, Var),
    ConcatCols(Vec<Var>),
    Im2col3x3 { x: Var, height: usize, width: usize },
    AvgPool2 { x: Var, height: usize, width: usize },
    Upsample2 { x: Var, height: usize, width: usize },
    Mse(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Offsets of the 3×3 neighbourhood in column-block order.
const NEIGHBOURS: [(isize, isize); 9] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)];

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input or parameter; gradients flow into it but not past it.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds the 1×cols row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (x, row) = (self.value(a), self.value(r));
        assert_eq!((1, x.cols), row.shape(), "add_row expects a 1×cols row");
        let v = Matrix::from_fn(x.rows, x.cols, |i, j| x.get(i, j) + row.data[j]);
        self.push(v, Op::AddRow(a, r))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).concat_rows(self.value(b));
        self.push(v, Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::concat_cols(&vals);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Zero-padded 3×3 patches: row `p` holds the 9 neighbours of grid
    /// position `p`, each contributing all input columns.
    pub fn im2col3x3(&mut self, x: Var, height: usize, width: usize) -> Var {
        let v = im2col3x3(self.value(x), height, width);
        self.push(v, Op::Im2col3x3 { x, height, width })
    }

    /// 2×2 average pooling; grid dimensions must be even.
    pub fn avgpool2(&mut self, x: Var, height: usize, width: usize) -> Var {
        let src = self.value(x);
        assert!(height.is_multiple_of(2) && width.is_multiple_of(2), "avgpool2 needs even grid dimensions");
        let (h2, w2) = (height / 2, width / 2);
        let mut out = Matrix::zeros(h2 * w2, src.cols);
        for y in 0..height {
            for xx in 0..width {
                let o = (y / 2) * w2 + xx / 2;
                for c in 0..src.cols {
                    out.data[o * src.cols + c] += 0.25 * src.get(y * width + xx, c);
                }
            }
        }
        self.push(out, Op::AvgPool2 { x, height, width })
    }

    /// Nearest-neighbour 2× upsampling of a `height × width` grid.
    pub fn upsample2(&mut self, x: Var, height: usize, width: usize) -> Var {
        let src = self.value(x);
        let w2 = width * 2;
        let v = Matrix::from_fn(height * 2 * w2, src.cols, |p, c| {
            let (y, xx) = (p / w2, p % w2);
            src.get((y / 2) * width + xx / 2, c)
        });
        self.push(v, Op::Upsample2 { x, height, width })
    }

    /// Mean squared error as a 1×1 matrix.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mse shapes");
        let n = x.len() as f64;
        let s: f64 = x.data.iter().zip(&y.data).map(|(p, q)| (p - q) * (p - q)).sum();
        self.push(Matrix::from_vec(1, 1, vec![s / n]).expect("1×1"), Op::Mse(a, b))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]).expect("1×1"));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
                Some(e) => e.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => unreachable!("leaves are handled above"),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, g.matmul(&bv.transpose()));
                    acc(*b, av.transpose().matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRow(a, r) => {
                    let sums = Matrix::from_fn(1, g.cols, |_, j| (0..g.rows).map(|k| g.get(k, j)).sum());
                    acc(*a, g);
                    acc(*r, sums);
                }
                Op::Scale(a, s) => acc(*a, g.scale(*s)),
                Op::Silu(a) => {
                    let d = self.value(*a).zip_map(&g, |x, gy| {
                        let s = sigmoid(x);
                        gy * (s + x * s * (1.0 - s))
                    });
                    acc(*a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                        for c in 0..y.cols {
                            d.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    acc(*a, d);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::ConcatRows(a, b) => {
                    let ra = self.value(*a).rows;
                    let top = Matrix::from_vec(ra, g.cols, g.data[..ra * g.cols].to_vec()).expect("split");
                    let bottom = Matrix::from_vec(g.rows - ra, g.cols, g.data[ra * g.cols..].to_vec()).expect("split");
                    acc(*a, top);
                    acc(*b, bottom);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.value(*p).cols;
                        acc(*p, g.col_slice(start, n));
                        start += n;
                    }
                }
                Op::Im2col3x3 { x, height, width } => {
                    let c = self.value(*x).cols;
                    let mut d = Matrix::zeros(height * width, c);
                    for y in 0..*height {
                        for xx in 0..*width {
                            let p = y * width + xx;
                            for (k, (dy, dx)) in NEIGHBOURS.iter().enumerate() {
                                let (ny, nx) = (y as isize + dy, xx as isize + dx);
                                if ny < 0 || nx < 0 || ny >= *height as isize || nx >= *width as isize {
                                    continue;
                                }
                                let q = ny as usize * width + nx as usize;
                                for ch in 0..c {
                                    d.data[q * c + ch] += g.get(p, k * c + ch);
                                }
                            }
                        }
                    }
                    acc(*x, d);
                }
                Op::AvgPool2 { x, height, width } => {
                    let w2 = width / 2;
                    let d = Matrix::from_fn(height * width, g.cols, |p, c| {
                        let (y, xx) = (p / width, p % width);
                        0.25 * g.get((y / 2) * w2 + xx / 2, c)
                    });
                    acc(*x, d);
                }
                Op::Upsample2 { x, height, width } => {
                    let w2 = width * 2;
                    let mut d = Matrix::zeros(height * width, g.cols);
                    for p in 0..g.rows {
                        let (y, xx) = (p / w2, p % w2);
                        let q = (y / 2) * width + xx / 2;
                        for c in 0..g.cols {
                            d.data[q * g.cols + c] += g.get(p, c);
                        }
                    }
                    acc(*x, d);
                }
                Op::Mse(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let k = 2.0 * g.data[0] / x.len() as f64;
                    let d = x.zip_map(y, |p, q| k * (p - q));
                    acc(*b, d.scale(-1.0));
                    acc(*a, d);
                }
            }
        }
        Gradients { grads }
    }
}

/// Output of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.grads[v.0].clone().unwrap_or_else(|| Matrix::zeros(like.rows, like.cols))
    }

    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

pub(crate) fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| if m == f64::NEG_INFINITY { 0.0 } else { (v - m).exp() }).collect();
        let s: f64 = exps.iter().sum();
        for (c, e) in exps.into_iter().enumerate() {
            out.set(r, c, if s > 0.0 { e / s } else { 0.0 });
        }
    }
    out
}

pub(crate) fn im2col3x3(src: &Matrix, height: usize, width: usize) -> Matrix {
    assert_eq!(src.rows, height * width, "im2col grid size");
    let c = src.cols;
    let mut out = Matrix::zeros(height * width, 9 * c);
    for y in 0..height {
        for xx in 0..width {
            let p = y * width + xx;
            for (k, (dy, dx)) in NEIGHBOURS.iter().enumerate() {
                let (ny, nx) = (y as isize + dy, xx as isize + dx);
                if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                    continue;
                }
                let q = ny as usize * width + nx as usize;
                out.data[p * 9 * c + k * c..p * 9 * c + (k + 1) * c].copy_from_slice(src.row(q));
            }
        }
    }
    out
}
