//! Solution artifacts: CSV export and a compact binary cache with a
//! version header for resuming runs. The cache stores `f64` regardless
//! of the working scalar.

use std::io::{Read, Write};

use crate::scalar::{cast_usize, Scalar};

use super::{Axis, Grid, HjbError, PolicyField, ValueField};

const MAGIC: &[u8; 4] = b"AGCY";
const VERSION: u32 = 1;

/// One row per (time slice, node): `t, w..., z..., F, y*..., c*...,
/// a*..., multiplicity`. Terminal rows carry the value only.
pub fn write_solution_csv<T: Scalar, W: Write>(
    grid: &Grid<T>,
    value: &ValueField<T>,
    policy: &PolicyField<T>,
    out: &mut W,
) -> Result<(), HjbError> {
    let n = grid.n();
    write!(out, "t[time]")?;
    for i in 1..=n {
        write!(out, ",w_{i}[payoff]")?;
    }
    for i in 1..=n {
        write!(out, ",z_{i}[state]")?;
    }
    write!(out, ",F[payoff]")?;
    for i in 1..=n {
        write!(out, ",y_{i}*[1]")?;
    }
    for i in 1..=n {
        write!(out, ",c_{i}*[payoff/time]")?;
    }
    for i in 1..=n {
        write!(out, ",a_{i}*[action]")?;
    }
    writeln!(out, ",multiple_equilibria[flag]")?;

    let mut coords = Vec::new();
    for (k, slice) in value.slices.iter().enumerate() {
        let t = grid.dt() * cast_usize(k);
        for (flat, &f) in slice.iter().enumerate() {
            grid.shape().unravel(flat, &mut coords);
            let (w, z) = grid.state_at(&coords);
            write!(out, "{t}")?;
            for v in w.iter().chain(&z) {
                write!(out, ",{v}")?;
            }
            write!(out, ",{f}")?;
            if k < grid.t_steps() {
                for block in [&policy.y[k], &policy.c[k], &policy.a[k]] {
                    for i in 0..n {
                        write!(out, ",{}", block[flat * n + i])?;
                    }
                }
                writeln!(out, ",{}", policy.multiplicity[k][flat])?;
            } else {
                // terminal slice has no policy
                for _ in 0..3 * n + 1 {
                    write!(out, ",")?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

fn push_f64<T: Scalar>(buf: &mut Vec<u8>, v: T) {
    buf.extend_from_slice(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], HjbError> {
        if self.pos + len > self.data.len() {
            return Err(HjbError::BadCache("truncated".into()));
        }
        let out = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, HjbError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, HjbError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn scalar<T: Scalar>(&mut self) -> Result<T, HjbError> {
        let v = self.f64()?;
        T::from_f64(v).ok_or_else(|| HjbError::BadCache(format!("unrepresentable value {v}")))
    }
}

/// Serialize grid + value + policy for later resumption.
pub fn write_solution<T: Scalar, W: Write>(
    grid: &Grid<T>,
    value: &ValueField<T>,
    policy: &PolicyField<T>,
    out: &mut W,
) -> Result<(), HjbError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    push_u64(&mut buf, grid.n() as u64);
    push_u64(&mut buf, grid.t_steps() as u64);
    push_f64(&mut buf, grid.dt());
    for axis in grid.w_axes().iter().chain(grid.z_axes()) {
        push_u64(&mut buf, axis.len() as u64);
        for &p in axis.points() {
            push_f64(&mut buf, p);
        }
    }
    for slice in &value.slices {
        for &v in slice {
            push_f64(&mut buf, v);
        }
    }
    for k in 0..grid.t_steps() {
        for block in [&policy.y[k], &policy.c[k], &policy.a[k]] {
            for &v in block {
                push_f64(&mut buf, v);
            }
        }
        buf.extend_from_slice(&policy.multiplicity[k]);
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Load a solution cache. The caller supplies the problem only to size
/// the horizon consistently; shapes come from the header.
pub fn read_solution<T: Scalar, R: Read>(
    input: &mut R,
) -> Result<(GridSkeleton<T>, ValueField<T>, PolicyField<T>), HjbError> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let mut rd = Reader { data: &data, pos: 0 };
    if rd.take(4)? != MAGIC {
        return Err(HjbError::BadCache("bad magic".into()));
    }
    let version = u32::from_le_bytes(rd.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(HjbError::BadCache(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let n = rd.u64()? as usize;
    let t_steps = rd.u64()? as usize;
    let dt: T = rd.scalar()?;
    let mut axes = Vec::with_capacity(2 * n);
    for _ in 0..2 * n {
        let len = rd.u64()? as usize;
        let mut points = Vec::with_capacity(len);
        for _ in 0..len {
            points.push(rd.scalar::<T>()?);
        }
        axes.push(points);
    }
    let nodes: usize = axes.iter().map(Vec::len).product();
    let mut slices = Vec::with_capacity(t_steps + 1);
    for _ in 0..=t_steps {
        let mut slice = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            slice.push(rd.scalar::<T>()?);
        }
        slices.push(slice);
    }
    let mut policy = PolicyField {
        y: Vec::with_capacity(t_steps),
        c: Vec::with_capacity(t_steps),
        a: Vec::with_capacity(t_steps),
        multiplicity: Vec::with_capacity(t_steps),
    };
    for _ in 0..t_steps {
        let mut blocks = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut block = Vec::with_capacity(nodes * n);
            for _ in 0..nodes * n {
                block.push(rd.scalar::<T>()?);
            }
            blocks.push(block);
        }
        policy.a.push(blocks.pop().unwrap());
        policy.c.push(blocks.pop().unwrap());
        policy.y.push(blocks.pop().unwrap());
        policy.multiplicity.push(rd.take(nodes)?.to_vec());
    }
    Ok((
        GridSkeleton {
            n,
            t_steps,
            dt,
            axes,
        },
        ValueField { slices },
        policy,
    ))
}

/// Grid geometry recovered from a cache; rebuild a [`Grid`] against the
/// owning problem with [`GridSkeleton::into_grid`].
pub struct GridSkeleton<T> {
    pub n: usize,
    pub t_steps: usize,
    pub dt: T,
    pub axes: Vec<Vec<T>>,
}

impl<T: Scalar> GridSkeleton<T> {
    pub fn into_grid(
        self,
        spec: &crate::model::ProblemSpec<T>,
    ) -> Result<Grid<T>, HjbError> {
        if self.n != spec.n() {
            return Err(HjbError::BadCache(format!(
                "cache is for n = {}, problem has n = {}",
                self.n,
                spec.n()
            )));
        }
        let expected_dt = spec.horizon() / cast_usize(self.t_steps);
        if ((expected_dt - self.dt) / expected_dt).abs() > T::from_f64(1e-9).unwrap() {
            return Err(HjbError::BadCache(
                "cache time step does not match the problem horizon".into(),
            ));
        }
        let mut axes = self.axes.into_iter();
        let rebuild = |points: Vec<T>| -> Result<Axis<T>, HjbError> {
            if points.len() == 1 {
                Ok(Axis::single(points[0]))
            } else {
                Axis::linspace(points[0], *points.last().unwrap(), points.len())
            }
        };
        let w_axes = (0..self.n)
            .map(|_| rebuild(axes.next().unwrap()))
            .collect::<Result<_, _>>()?;
        let z_axes = (0..self.n)
            .map(|_| rebuild(axes.next().unwrap()))
            .collect::<Result<_, _>>()?;
        Grid::new(spec, self.t_steps, w_axes, z_axes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builders::linquad_problem;

    #[test]
    fn cache_round_trips_and_rejects_corruption() {
        let spec = linquad_problem(1, 1.0, 0.0, 0.1, 1.0, 0.0);
        let grid = Grid::regular(&spec, 3, &[0.5], 4, &[(0.0, 0.2)], 2).unwrap();
        let nodes = grid.node_count();
        let value = ValueField {
            slices: (0..=3)
                .map(|k| (0..nodes).map(|i| (k * nodes + i) as f64 * 0.5).collect())
                .collect(),
        };
        let policy = PolicyField {
            y: (0..3).map(|_| vec![0.25; nodes]).collect(),
            c: (0..3).map(|_| vec![0.5; nodes]).collect(),
            a: (0..3).map(|_| vec![0.75; nodes]).collect(),
            multiplicity: (0..3).map(|_| vec![0u8; nodes]).collect(),
        };
        let mut buf = Vec::new();
        write_solution(&grid, &value, &policy, &mut buf).unwrap();

        let (skel, v2, p2) = read_solution::<f64, _>(&mut buf.as_slice()).unwrap();
        let g2 = skel.into_grid(&spec).unwrap();
        assert_eq!(g2.node_count(), nodes);
        assert_eq!(v2.slices, value.slices);
        assert_eq!(p2.y, policy.y);
        assert_eq!(p2.a, policy.a);

        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(matches!(
            read_solution::<f64, _>(&mut corrupt.as_slice()),
            Err(HjbError::BadCache(_))
        ));
        let truncated = &buf[..buf.len() - 4];
        assert!(read_solution::<f64, _>(&mut &truncated[..]).is_err());
    }
}
