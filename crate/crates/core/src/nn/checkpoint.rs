//! `LPNET1` checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        6 bytes  "LPNET1"
//! input_dim    u32
//! n_hidden     u32
//! widths       u32 × n_hidden
//! output_dim   u32
//! hidden_act   u8   (0 = tanh, 1 = relu)
//! output_act   u8   (0 = identity, 1 = sigmoid)
//! parameters   f64 × param_count, per layer: weights row-major (fan_in, fan_out), then biases
//! ```

use std::io::{Read, Write};

use super::{HiddenActivation, NetworkParams, NetworkSpec, OutputActivation};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"LPNET1";

pub fn write_checkpoint<W: Write>(
    mut w: W,
    spec: &NetworkSpec,
    params: &NetworkParams,
) -> Result<()> {
    params.check_shape(spec)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    let dim = |v: usize| -> Result<[u8; 4]> {
        u32::try_from(v)
            .map(u32::to_le_bytes)
            .map_err(|_| Error::shape("dimension exceeds u32"))
    };
    w.write_all(&dim(spec.input_dim)?)?;
    w.write_all(&dim(spec.hidden_widths.len())?)?;
    for &width in &spec.hidden_widths {
        w.write_all(&dim(width)?)?;
    }
    w.write_all(&dim(spec.output_dim)?)?;
    w.write_all(&[
        match spec.hidden_activation {
            HiddenActivation::Tanh => 0,
            HiddenActivation::Relu => 1,
        },
        match spec.output_activation {
            OutputActivation::Identity => 0,
            OutputActivation::Sigmoid => 1,
        },
    ])?;
    for v in params.iter_flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(NetworkSpec, NetworkParams)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(6)? != CHECKPOINT_MAGIC {
        return Err(Error::Parse("missing LPNET1 magic".into()));
    }
    let input_dim = c.u32()?;
    let n_hidden = c.u32()?;
    if n_hidden > 1 << 16 {
        return Err(Error::Parse(format!(
            "implausible hidden layer count {n_hidden}"
        )));
    }
    let hidden_widths = (0..n_hidden).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let output_dim = c.u32()?;
    let acts = c.take(2)?;
    let hidden_activation = match acts[0] {
        0 => HiddenActivation::Tanh,
        1 => HiddenActivation::Relu,
        v => return Err(Error::Parse(format!("unknown hidden activation tag {v}"))),
    };
    let output_activation = match acts[1] {
        0 => OutputActivation::Identity,
        1 => OutputActivation::Sigmoid,
        v => return Err(Error::Parse(format!("unknown output activation tag {v}"))),
    };
    let spec = NetworkSpec::new(
        input_dim,
        hidden_widths,
        output_dim,
        hidden_activation,
        output_activation,
    )?;
    let mut params = NetworkParams::zeros(&spec);
    for p in params.iter_flat_mut() {
        let b = c.take(8)?;
        *p = f64::from_le_bytes(b.try_into().expect("8 bytes"));
    }
    if c.pos != bytes.len() {
        return Err(Error::Parse(format!(
            "{} trailing bytes after parameters",
            bytes.len() - c.pos
        )));
    }
    Ok((spec, params))
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let spec = NetworkSpec::new(
            3,
            vec![5, 4],
            2,
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
        )
        .unwrap();
        let params = init_params(&spec, 42);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &params).unwrap();
        assert_eq!(&buf[..6], b"LPNET1");
        let (spec2, params2) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(params, params2);
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let spec = NetworkSpec::new(
            1,
            vec![2],
            1,
            HiddenActivation::Tanh,
            OutputActivation::Identity,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &init_params(&spec, 0)).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}
