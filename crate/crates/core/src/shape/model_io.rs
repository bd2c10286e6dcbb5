//! Versioned binary container for trained shape models: a magic tag,
//! format version, JSON architecture descriptor, then the raw weight
//! tensors in little-endian f32. Unknown versions are rejected.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::Error;
use crate::shape::nn::{ArchDescriptor, Autoencoder};
use crate::Result;

const MAGIC: &[u8; 4] = b"MSAE";
const CONTAINER_VERSION: u32 = 1;

pub fn save_model(model: &Autoencoder, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    let io_err = |e| Error::io(display.clone(), e);

    let descriptor =
        serde_json::to_vec(&model.descriptor).expect("descriptor serializes");
    file.write_all(MAGIC).map_err(io_err)?;
    file.write_all(&CONTAINER_VERSION.to_le_bytes())
        .map_err(|e| Error::io(display.clone(), e))?;
    file.write_all(&(descriptor.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(display.clone(), e))?;
    file.write_all(&descriptor)
        .map_err(|e| Error::io(display.clone(), e))?;

    let params = model.parameters();
    file.write_all(&(params.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(display.clone(), e))?;
    for tensor in params {
        file.write_all(&(tensor.len() as u64).to_le_bytes())
            .map_err(|e| Error::io(display.clone(), e))?;
        let mut bytes = Vec::with_capacity(tensor.len() * 4);
        for v in tensor {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes)
            .map_err(|e| Error::io(display.clone(), e))?;
    }
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Autoencoder> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut file =
        std::fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(display.clone(), e))?;
    decode_model(&bytes)
}

fn decode_model(bytes: &[u8]) -> Result<Autoencoder> {
    let bad = |msg: &str| Error::invalid(format!("model container: {msg}"));
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > bytes.len() {
            return Err(bad("unexpected end of data"));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };

    if take(&mut cursor, 4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CONTAINER_VERSION,
        });
    }
    let desc_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let descriptor: ArchDescriptor = serde_json::from_slice(take(&mut cursor, desc_len)?)
        .map_err(|e| bad(&format!("descriptor parse failed: {e}")))?;

    let tensor_count =
        u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let len = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        let data = take(&mut cursor, len * 4)?;
        let tensor: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(tensor);
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Autoencoder::from_parts(descriptor, tensors)
}
