//! Binary network records.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes   b"AMNN"
//! version      u16       1
//! hidden act   u8        0 identity, 1 tanh, 2 mish
//! output act   u8
//! n_widths     u32
//! widths       u32 * n_widths
//! n_params     u64
//! params       f64 * n_params   (layer by layer: weights row-major, then biases)
//! has_adam     u8        0 or 1
//! -- if has_adam == 1:
//! step         u64
//! lr, beta1, beta2, epsilon   f64 * 4
//! first moment  f64 * n_params
//! second moment f64 * n_params
//! ```

use std::io::{Read, Write};

use super::{Activation, AdamState, DenseNet, NnError};
use rand::SeedableRng;

pub const NET_MAGIC: &[u8; 4] = b"AMNN";
pub const NET_VERSION: u16 = 1;

fn put_f64s<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], NnError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, NnError> {
    (0..n).map(|_| Ok(f64::from_le_bytes(get::<8, _>(r)?))).collect()
}

pub fn write_net<W: Write>(
    w: &mut W,
    net: &DenseNet,
    adam: Option<&AdamState>,
) -> Result<(), NnError> {
    w.write_all(NET_MAGIC)?;
    w.write_all(&NET_VERSION.to_le_bytes())?;
    w.write_all(&[net.hidden_activation().code(), net.output_activation().code()])?;
    w.write_all(&(net.widths().len() as u32).to_le_bytes())?;
    for &width in net.widths() {
        w.write_all(&(width as u32).to_le_bytes())?;
    }
    let params = net.params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    put_f64s(w, &params)?;
    match adam {
        None => w.write_all(&[0])?,
        Some(adam) => {
            if adam.first_moment.len() != params.len() {
                return Err(NnError::DimensionMismatch {
                    expected: params.len(),
                    actual: adam.first_moment.len(),
                });
            }
            w.write_all(&[1])?;
            w.write_all(&adam.step.to_le_bytes())?;
            put_f64s(w, &[adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon])?;
            put_f64s(w, &adam.first_moment)?;
            put_f64s(w, &adam.second_moment)?;
        }
    }
    Ok(())
}

pub fn read_net<R: Read>(r: &mut R) -> Result<(DenseNet, Option<AdamState>), NnError> {
    if &get::<4, _>(r)? != NET_MAGIC {
        return Err(NnError::Checkpoint("bad network magic".into()));
    }
    let version = u16::from_le_bytes(get::<2, _>(r)?);
    if version != NET_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported network version {version}")));
    }
    let [hidden, output] = get::<2, _>(r)?;
    let hidden = Activation::from_code(hidden)
        .ok_or_else(|| NnError::Checkpoint(format!("unknown activation code {hidden}")))?;
    let output = Activation::from_code(output)
        .ok_or_else(|| NnError::Checkpoint(format!("unknown activation code {output}")))?;
    let n_widths = u32::from_le_bytes(get::<4, _>(r)?) as usize;
    let widths = (0..n_widths)
        .map(|_| Ok(u32::from_le_bytes(get::<4, _>(r)?) as usize))
        .collect::<Result<Vec<_>, NnError>>()?;
    // Parameters are overwritten below; the seed only fixes shapes.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut net = DenseNet::new(&widths, hidden, output, &mut rng)?;
    let n_params = u64::from_le_bytes(get::<8, _>(r)?) as usize;
    if n_params != net.num_params() {
        return Err(NnError::Checkpoint(format!(
            "parameter count {n_params} does not match widths {widths:?}"
        )));
    }
    net.set_params(&get_f64s(r, n_params)?)?;
    let [has_adam] = get::<1, _>(r)?;
    let adam = match has_adam {
        0 => None,
        1 => {
            let step = u64::from_le_bytes(get::<8, _>(r)?);
            let hp = get_f64s(r, 4)?;
            Some(AdamState {
                learning_rate: hp[0],
                beta1: hp[1],
                beta2: hp[2],
                epsilon: hp[3],
                step,
                first_moment: get_f64s(r, n_params)?,
                second_moment: get_f64s(r, n_params)?,
            })
        }
        other => return Err(NnError::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    Ok((net, adam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn record_round_trips_with_optimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = DenseNet::new(&[3, 4, 2], Activation::Mish, Activation::Tanh, &mut rng).unwrap();
        let mut adam = AdamState::for_net(&net, 1e-3);
        let grad = vec![0.25; net.num_params()];
        let mut p = net.params();
        adam.update(&mut p, &grad).unwrap();
        net.set_params(&p).unwrap();

        let mut buf = Vec::new();
        write_net(&mut buf, &net, Some(&adam)).unwrap();
        let (back, back_adam) = read_net(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back_adam.unwrap(), adam);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::new(&[2, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_net(&mut buf, &net, None).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_net(&mut buf.as_slice()), Err(NnError::Checkpoint(_))));
    }

    #[test]
    fn truncated_record_is_an_io_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::new(&[2, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_net(&mut buf, &net, None).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(read_net(&mut buf.as_slice()), Err(NnError::Io(_))));
    }
}
