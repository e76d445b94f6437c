//! Checkpoint files: ASCII manifest lines followed by raw little-endian
//! 32-bit float (or int) blocks.
//!
//! Embedding checkpoint layout:
//! ```text
//! transe <d> <n_entities> <n_relations> <seed>\n
//! <entity rows f32 LE> <relation rows f32 LE>
//! kmeans <n_clusters>\n
//! <assignment i32 LE> <centroids f32 LE> <learned parts f32 LE>
//! ```
//!
//! Parameter checkpoint layout:
//! ```text
//! params <count> <d>\n
//! <name> <dim0>[x<dim1>] <offset>\n   (count times, offsets in f32 units)
//! <all parameter data f32 LE>
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::embed::{ClusterId, ClusterModel, EmbeddingTable};
use crate::error::{Error, Result};
use crate::nn::store::ParamStore;
use crate::nn::tensor::Tensor;

fn write_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_f32s(bytes: &[u8], offset: &mut usize, count: usize, path: &Path) -> Result<Vec<f64>> {
    let need = count * 4;
    if *offset + need > bytes.len() {
        return Err(Error::parse(
            path,
            0,
            format!("truncated checkpoint: wanted {need} bytes at {offset}"),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let start = *offset + i * 4;
        let arr: [u8; 4] = bytes[start..start + 4].try_into().unwrap();
        values.push(f32::from_le_bytes(arr) as f64);
    }
    *offset += need;
    Ok(values)
}

fn read_i32s(bytes: &[u8], offset: &mut usize, count: usize, path: &Path) -> Result<Vec<i32>> {
    let need = count * 4;
    if *offset + need > bytes.len() {
        return Err(Error::parse(
            path,
            0,
            format!("truncated checkpoint: wanted {need} bytes at {offset}"),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let start = *offset + i * 4;
        let arr: [u8; 4] = bytes[start..start + 4].try_into().unwrap();
        values.push(i32::from_le_bytes(arr));
    }
    *offset += need;
    Ok(values)
}

fn read_line(bytes: &[u8], offset: &mut usize, path: &Path) -> Result<String> {
    let rest = &bytes[*offset..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(path, 0, "missing manifest line"))?;
    let line = std::str::from_utf8(&rest[..end])
        .map_err(|_| Error::parse(path, 0, "manifest line is not UTF-8"))?
        .to_string();
    *offset += end + 1;
    Ok(line)
}

/// Write embeddings plus the cluster model.
pub fn save_embeddings(
    path: &Path,
    table: &EmbeddingTable,
    clusters: &ClusterModel,
    seed: u64,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(
        format!(
            "transe {} {} {} {}\n",
            table.d,
            table.n_entities(),
            table.n_relations(),
            seed
        )
        .as_bytes(),
    );
    write_f32s(&mut out, table.entity_rows());
    write_f32s(&mut out, table.relation_rows());
    out.extend_from_slice(format!("kmeans {}\n", clusters.n_clusters).as_bytes());
    for a in &clusters.assignment {
        out.extend_from_slice(&(a.0 as i32).to_le_bytes());
    }
    write_f32s(&mut out, &clusters.centroids);
    write_f32s(&mut out, &clusters.learned_parts);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Read embeddings plus the cluster model; adjacency is rebuilt by the
/// caller from the graph.
pub fn load_embeddings(path: &Path) -> Result<(EmbeddingTable, ClusterModel, u64)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut offset = 0usize;

    let header = read_line(&bytes, &mut offset, path)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "transe" {
        return Err(Error::parse(path, 1, "expected 'transe d |E| |R| seed'"));
    }
    let d: usize = parts[1]
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad embedding size"))?;
    let n_entities: usize = parts[2]
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad entity count"))?;
    let n_relations: usize = parts[3]
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad relation count"))?;
    let seed: u64 = parts[4]
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad seed"))?;
    let entity_rows = read_f32s(&bytes, &mut offset, n_entities * d, path)?;
    let relation_rows = read_f32s(&bytes, &mut offset, n_relations * d, path)?;
    let table = EmbeddingTable::from_rows(d, n_entities, n_relations, entity_rows, relation_rows);

    let header = read_line(&bytes, &mut offset, path)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 || parts[0] != "kmeans" {
        return Err(Error::parse(path, 2, "expected 'kmeans N'"));
    }
    let n_clusters: usize = parts[1]
        .parse()
        .map_err(|_| Error::parse(path, 2, "bad cluster count"))?;
    let assignment: Vec<ClusterId> = read_i32s(&bytes, &mut offset, n_entities, path)?
        .into_iter()
        .map(|a| ClusterId(a as u32))
        .collect();
    let centroids = read_f32s(&bytes, &mut offset, n_clusters * d, path)?;
    let learned_parts = read_f32s(&bytes, &mut offset, n_clusters * d, path)?;
    let clusters = ClusterModel {
        n_clusters,
        d,
        assignment,
        centroids,
        learned_parts,
        adjacency: Vec::new(),
    };
    Ok((table, clusters, seed))
}

fn shape_string(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_shape(text: &str, path: &Path) -> Result<Vec<usize>> {
    text.split('x')
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::parse(path, 0, format!("bad shape component {p}")))
        })
        .collect()
}

/// Write every parameter with a manifest of (name, shape, offset).
pub fn save_params(path: &Path, store: &ParamStore, d: usize) -> Result<()> {
    let mut manifest = format!("params {} {}\n", store.len(), d);
    let mut data = Vec::new();
    let mut offset = 0usize;
    for id in 0..store.len() {
        let value = store.value(id);
        manifest.push_str(&format!(
            "{} {} {}\n",
            store.name(id),
            shape_string(value.shape()),
            offset
        ));
        write_f32s(&mut data, value.data());
        offset += value.len();
    }
    let mut out = manifest.into_bytes();
    out.extend_from_slice(&data);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Read a parameter checkpoint back into a fresh store, preserving
/// registration order. Returns the store and the recorded embedding size.
pub fn load_params(path: &Path) -> Result<(ParamStore, usize)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut offset = 0usize;
    let header = read_line(&bytes, &mut offset, path)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "params" {
        return Err(Error::parse(path, 1, "expected 'params count d'"));
    }
    let count: usize = parts[1]
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad parameter count"))?;
    let d: usize = parts[2]
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad embedding size"))?;

    let mut entries: Vec<(String, Vec<usize>, usize)> = Vec::with_capacity(count);
    for i in 0..count {
        let line = read_line(&bytes, &mut offset, path)?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::parse(
                path,
                i + 2,
                "expected 'name shape offset' manifest entry",
            ));
        }
        let shape = parse_shape(parts[1], path)?;
        let data_offset: usize = parts[2]
            .parse()
            .map_err(|_| Error::parse(path, i + 2, "bad offset"))?;
        entries.push((parts[0].to_string(), shape, data_offset));
    }

    let data_start = offset;
    let mut store = ParamStore::new();
    for (name, shape, float_offset) in entries {
        let len: usize = shape.iter().product();
        let mut at = data_start + float_offset * 4;
        let values = read_f32s(&bytes, &mut at, len, path)?;
        store.add(&name, Tensor::from_vec(&shape, values))?;
    }
    Ok((store, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{validate_param_shapes, PolicyParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn embedding_round_trip() {
        let table = EmbeddingTable::from_rows(
            2,
            3,
            2,
            vec![0.5, -0.25, 1.0, 0.0, 0.125, 2.0],
            vec![0.75, -1.5, 0.0, 3.0],
        );
        let clusters = ClusterModel {
            n_clusters: 2,
            d: 2,
            assignment: vec![ClusterId(0), ClusterId(1), ClusterId(0)],
            centroids: vec![0.5, 0.0, -0.5, 1.0],
            learned_parts: vec![0.25, 0.5, 0.75, -0.125],
            adjacency: Vec::new(),
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        save_embeddings(f.path(), &table, &clusters, 42).unwrap();
        let (table2, clusters2, seed) = load_embeddings(f.path()).unwrap();
        assert_eq!(seed, 42);
        // Values chosen exactly representable in f32.
        assert_eq!(table.entity_rows(), table2.entity_rows());
        assert_eq!(table.relation_rows(), table2.relation_rows());
        assert_eq!(clusters.assignment, clusters2.assignment);
        assert_eq!(clusters.centroids, clusters2.centroids);
        assert_eq!(clusters.learned_parts, clusters2.learned_parts);
    }

    #[test]
    fn params_round_trip_and_shape_validation() {
        let d = 50;
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let _ = PolicyParams::register(
            &mut store,
            d,
            Tensor::zeros(&[9, d]),
            Tensor::zeros(&[4, d]),
            &mut rng,
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_params(f.path(), &store, d).unwrap();
        let (loaded, d2) = load_params(f.path()).unwrap();
        assert_eq!(d2, d);
        assert_eq!(loaded.len(), store.len());
        // Declared shapes hold at load time for d = 50.
        validate_param_shapes(&loaded, d, 9, 4).unwrap();
        // Bitwise stability through the f32 narrowing on a reload cycle.
        let f2 = tempfile::NamedTempFile::new().unwrap();
        save_params(f2.path(), &loaded, d).unwrap();
        assert_eq!(
            std::fs::read(f.path()).unwrap(),
            std::fs::read(f2.path()).unwrap()
        );
    }

    #[test]
    fn corrupt_manifest_is_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), b"params x y\n").unwrap();
        assert!(load_params(f.path()).is_err());
    }
}
