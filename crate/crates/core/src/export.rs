//! Trajectory CSV export and the binary iterate dump.
//!
//! The binary layout is a 16-byte header followed by `count · dim`
//! little-endian `f64` values, one iterate after another:
//!
//! ```text
//! bytes 0..8   b"SGDMTRAJ"
//! bytes 8..12  dim   (u32, little-endian)
//! bytes 12..16 count (u32, little-endian)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::losses::WeightVector;
use crate::optimizer::Trajectory;

pub const TRAJ_MAGIC: &[u8; 8] = b"SGDMTRAJ";

/// Round-trip decimal text for a float; empty for missing values.
pub fn fmt_f64(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:?}"))
}

/// Columns `step,index,risk,iterate_norm,distance`, one row per iterate
/// `w_1 … w_{T+1}`. `index` is empty on the last row, `risk` where it was not
/// recorded, and `distance` unless `distances` is given.
pub fn write_trajectory_csv<W: Write>(
    traj: &Trajectory,
    distances: Option<&[f64]>,
    mut out: W,
) -> Result<()> {
    if let Some(d) = distances {
        if d.len() != traj.iterates.len() {
            return Err(Error::InvalidArgument(format!(
                "{} distances for {} iterates",
                d.len(),
                traj.iterates.len()
            )));
        }
    }
    let risk_at = |k: usize| -> Option<f64> {
        let r = traj.risks.as_ref()?;
        if (k - 1) % traj.risk_stride != 0 {
            return None;
        }
        r.get((k - 1) / traj.risk_stride).copied()
    };
    writeln!(out, "step,index,risk,iterate_norm,distance")?;
    for (j, w) in traj.iterates.iter().enumerate() {
        let k = j + 1;
        let index = traj.indices.get(j).map_or_else(String::new, |i| i.to_string());
        writeln!(
            out,
            "{k},{index},{},{},{}",
            fmt_f64(risk_at(k)),
            fmt_f64(Some(w.norm())),
            fmt_f64(distances.map(|d| d[j])),
        )?;
    }
    Ok(())
}

pub fn write_iterates_bin<W: Write>(iterates: &[WeightVector], mut out: W) -> Result<()> {
    let dim = iterates.first().map_or(0, |w| w.len());
    if iterates.iter().any(|w| w.len() != dim) {
        return Err(Error::InvalidArgument("iterates have unequal lengths".into()));
    }
    let dim32 = u32::try_from(dim)
        .map_err(|_| Error::InvalidArgument("dimension exceeds u32".into()))?;
    let count32 = u32::try_from(iterates.len())
        .map_err(|_| Error::InvalidArgument("iterate count exceeds u32".into()))?;
    out.write_all(TRAJ_MAGIC)?;
    out.write_all(&dim32.to_le_bytes())?;
    out.write_all(&count32.to_le_bytes())?;
    for w in iterates {
        for v in w.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_iterates_bin<R: Read>(mut input: R) -> Result<Vec<WeightVector>> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..8] != TRAJ_MAGIC {
        return Err(Error::InvalidArgument("bad trajectory magic".into()));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut buf = [0u8; 8];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut w = Vec::with_capacity(dim);
        for _ in 0..dim {
            input.read_exact(&mut buf)?;
            w.push(f64::from_le_bytes(buf));
        }
        out.push(w.into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::HyperParams;

    fn traj() -> Trajectory {
        Trajectory {
            iterates: vec![vec![0.0, 0.0].into(), vec![3.0, 4.0].into(), vec![0.1, 0.0].into()],
            gradients: vec![vec![1.0, 0.0].into(), vec![0.0, 1.0].into()],
            indices: vec![2, 1],
            risks: Some(vec![0.5, 0.25]),
            risk_stride: 2,
            hp: HyperParams::new(0.5, 0.0, 0.1, 2).unwrap(),
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_trajectory_csv(&traj(), Some(&[0.0, 1.0, 2.5]), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,index,risk,iterate_norm,distance");
        assert_eq!(lines[1], "1,2,0.5,0.0,0.0");
        assert_eq!(lines[2], "2,1,,5.0,1.0");
        assert_eq!(lines[3], "3,,0.25,0.1,2.5");
    }

    #[test]
    fn csv_without_distances() {
        let mut buf = Vec::new();
        write_trajectory_csv(&traj(), None, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().nth(1).unwrap().ends_with(','));
        assert!(write_trajectory_csv(&traj(), Some(&[0.0]), Vec::new()).is_err());
    }

    #[test]
    fn binary_round_trip_and_header() {
        let t = traj();
        let mut buf = Vec::new();
        write_iterates_bin(&t.iterates, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 3 * 2 * 8);
        assert_eq!(&buf[..8], b"SGDMTRAJ");
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &3u32.to_le_bytes());
        assert_eq!(&buf[16..24], &0.0f64.to_le_bytes());
        assert_eq!(&buf[32..40], &3.0f64.to_le_bytes());
        assert_eq!(read_iterates_bin(buf.as_slice()).unwrap(), t.iterates);
        buf[0] = b'X';
        assert!(read_iterates_bin(buf.as_slice()).is_err());
    }
}
