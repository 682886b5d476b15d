//! Versioned binary checkpoint: ordered (name, role, shape, f64 data)
//! entries, little-endian.

use crate::error::AugError;
use crate::model::{ParamEntry, ParamRole, ParamStore};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"AGCK";
const VERSION: u32 = 1;

fn role_tag(role: ParamRole) -> u8 {
    match role {
        ParamRole::Trunk => 0,
        ParamRole::AugWeight => 1,
        ParamRole::AugMagnitude => 2,
        ParamRole::State => 3,
    }
}

fn role_from(tag: u8) -> Result<ParamRole, AugError> {
    Ok(match tag {
        0 => ParamRole::Trunk,
        1 => ParamRole::AugWeight,
        2 => ParamRole::AugMagnitude,
        3 => ParamRole::State,
        t => return Err(AugError::Checkpoint(format!("unknown role tag {t}"))),
    })
}

pub fn save(store: &ParamStore, path: &Path) -> Result<(), AugError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, e) in store.iter() {
        let name = e.name.as_bytes();
        f.write_all(&(name.len() as u32).to_le_bytes())?;
        f.write_all(name)?;
        f.write_all(&[role_tag(e.role)])?;
        f.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            f.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &e.data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore, AugError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AugError::Checkpoint("bad checkpoint magic".into()));
    }
    let mut b4 = [0u8; 4];
    f.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(AugError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    f.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut store = ParamStore::new();
    let mut b8 = [0u8; 8];
    for _ in 0..count {
        f.read_exact(&mut b4)?;
        let name_len = u32::from_le_bytes(b4) as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| AugError::Checkpoint("non-utf8 parameter name".into()))?;
        let mut role_b = [0u8; 1];
        f.read_exact(&mut role_b)?;
        let role = role_from(role_b[0])?;
        f.read_exact(&mut b4)?;
        let ndim = u32::from_le_bytes(b4) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            f.read_exact(&mut b4)?;
            shape.push(u32::from_le_bytes(b4) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            f.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        store.add(name, &shape, data, role);
    }
    Ok(store)
}

/// Copy data from `loaded` into an existing structurally-identical store
/// (names, shapes and roles must match entry for entry).
pub fn load_into(store: &mut ParamStore, loaded: &ParamStore) -> Result<(), AugError> {
    if store.len() != loaded.len() {
        return Err(AugError::Checkpoint(format!(
            "checkpoint has {} entries, model expects {}",
            loaded.len(),
            store.len()
        )));
    }
    let mismatch: Vec<String> = store
        .iter()
        .zip(loaded.iter())
        .filter(|((_, a), (_, b))| a.name != b.name || a.shape != b.shape || a.role != b.role)
        .map(|((_, a), (_, b))| format!("{} vs {}", a.name, b.name))
        .collect();
    if !mismatch.is_empty() {
        return Err(AugError::Checkpoint(format!(
            "checkpoint layout mismatch: {}",
            mismatch.join(", ")
        )));
    }
    let data: Vec<(crate::model::ParamId, Vec<f64>)> = loaded
        .iter()
        .zip(store.iter())
        .map(|((_, src), (id, _))| (id, src.data.clone()))
        .collect();
    for (id, d) in data {
        store.set_data(id, d);
    }
    Ok(())
}

/// Convenience accessor used by reports: find an entry by name.
pub fn find_entry<'a>(store: &'a ParamStore, name: &str) -> Option<&'a ParamEntry> {
    store.iter().map(|(_, e)| e).find(|e| e.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("trunk.w", &[2, 3], vec![1.5, -2.25, 0.0, 1e-300, 3.7, -0.125], ParamRole::Trunk);
        s.add("aug.layer0.hidden_weights", &[2], vec![0.25, -0.5], ParamRole::AugWeight);
        s.add("aug.layer0.magnitudes", &[2], vec![0.1, 0.9], ParamRole::AugMagnitude);
        s.add("trunk.bn.running_mean", &[3], vec![0.1, 0.2, 0.3], ParamRole::State);
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = sample_store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&store, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.len(), store.len());
        for ((_, a), (_, b)) in store.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert_eq!(a.role, b.role);
            let ab: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn load_into_rejects_layout_mismatch() {
        let store = sample_store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&store, &path).unwrap();
        let loaded = load(&path).unwrap();
        let mut other = ParamStore::new();
        other.add("different", &[2], vec![0.0; 2], ParamRole::Trunk);
        assert!(load_into(&mut other, &loaded).is_err());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(load(&path).is_err());
    }
}
