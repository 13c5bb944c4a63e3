//! Channel-axis concatenation, slicing and permutation.

use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output channel `j` of a shuffle with `groups` groups reads input channel
/// `perm[j]`: the `groups × C/groups` channel grid is transposed.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || channels % groups != 0 {
        return Err(Error::dim(format!(
            "{channels} channels cannot be split into {groups} groups"
        )));
    }
    let per = channels / groups;
    Ok((0..channels)
        .map(|j| (j % groups) * per + j / groups)
        .collect())
}

fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut out = Vec::with_capacity(x.len());
    for ni in 0..n {
        for &src in perm {
            out.extend_from_slice(x.plane(ni, src));
        }
    }
    debug_assert_eq!(out.len(), n * c * hw);
    Tensor::new(x.shape(), out)
}

pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let (_, c, _, _) = x.dims4()?;
    permute(x, &shuffle_permutation(c, groups)?)
}

struct PermuteBackward {
    inverse: Vec<usize>,
}

impl Backward for PermuteBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(permute(grad, &self.inverse)?)])
    }
}

struct ConcatBackward {
    widths: Vec<usize>,
}

impl Backward for ConcatBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(self.widths.len());
        for (&width, &need) in self.widths.iter().zip(needs) {
            out.push(need.then(|| slice(grad, start, width)).transpose()?);
            start += width;
        }
        Ok(out)
    }
}

struct SliceBackward {
    shape: Vec<usize>,
    start: usize,
}

impl Backward for SliceBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (n, c, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        let width = grad.shape()[1];
        let hw = h * w;
        let mut gx = Tensor::zeros(&[n, c, h, w]);
        for ni in 0..n {
            let dst =
                &mut gx.data_mut()[(ni * c + self.start) * hw..(ni * c + self.start + width) * hw];
            dst.copy_from_slice(&grad.data()[ni * width * hw..(ni + 1) * width * hw]);
        }
        Ok(vec![Some(gx)])
    }
}

fn slice(x: &Tensor, start: usize, width: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if start + width > c {
        return Err(Error::dim(format!(
            "channel slice {start}..{} exceeds {c} channels",
            start + width
        )));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * width * hw);
    for ni in 0..n {
        out.extend_from_slice(&x.data()[(ni * c + start) * hw..(ni * c + start + width) * hw]);
    }
    Tensor::new(&[n, width, h, w], out)
}

fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat needs at least one tensor"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::dim(format!(
                "cannot concatenate {:?} with {:?}",
                p.shape(),
                first.shape()
            )));
        }
        total += pc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total * hw);
    for ni in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            out.extend_from_slice(&p.data()[ni * pc * hw..(ni + 1) * pc * hw]);
        }
    }
    Tensor::new(&[n, total, h, w], out)
}

impl Graph {
    pub fn concat_channels(&self, parts: &[&Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|v| v.value()).collect();
        let out = concat(&values)?;
        self.record("concat_channels", parts, out, || ConcatBackward {
            widths: parts.iter().map(|v| v.shape()[1]).collect(),
        })
    }

    pub fn slice_channels(&self, x: &Var, start: usize, width: usize) -> Result<Var> {
        let out = slice(x.value(), start, width)?;
        self.record("slice_channels", &[x], out, || SliceBackward {
            shape: x.shape().to_vec(),
            start,
        })
    }

    pub fn channel_shuffle(&self, x: &Var, groups: usize) -> Result<Var> {
        let (_, c, _, _) = x.value().dims4()?;
        let perm = shuffle_permutation(c, groups)?;
        let out = permute(x.value(), &perm)?;
        self.record("channel_shuffle", &[x], out, || {
            let mut inverse = vec![0; perm.len()];
            for (j, &src) in perm.iter().enumerate() {
                inverse[src] = j;
            }
            PermuteBackward { inverse }
        })
    }
}
