//! On-disk formats. Binary files are little-endian: a four-byte magic, a
//! small integer header, then row-major `f64` payload.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::ExtendedLatent;
use crate::synthetic::{AttributeLabel, Record, SyntheticSpec};

pub const LATENTS_FILE: &str = "latents.f64";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPEC_FILE: &str = "spec.json";
pub const INVERTED_FILE: &str = "inverted.f64";
pub const INVERSION_REPORT_FILE: &str = "inversion_report.csv";

const LATENTS_MAGIC: &[u8; 4] = b"LRWS";
const FEATURES_MAGIC: &[u8; 4] = b"LRFT";
const PCA_MAGIC: &[u8; 4] = b"LRPC";

struct Bin<R>(R);

impl<R: Read> Bin<R> {
    fn magic(&mut self, expected: &[u8; 4], path: &Path) -> Result<()> {
        let mut m = [0u8; 4];
        self.0.read_exact(&mut m)?;
        if &m != expected {
            return Err(Error::Format(format!(
                "{}: expected magic {:?}",
                path.display(),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<usize> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("count overflows usize".into()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; count.checked_mul(8).ok_or_else(|| Error::Format("payload too large".into()))?];
        self.0.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        let mut extra = [0u8; 1];
        if self.0.read(&mut extra)? != 0 {
            return Err(Error::Format(format!("{}: trailing bytes", path.display())));
        }
        Ok(())
    }
}

fn header_u32(v: usize) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Format(format!("{v} does not fit a u32 header field")))
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<Bin<BufReader<File>>> {
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(Bin(BufReader::new(file)))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Extended codes sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    pub layers: usize,
    pub dim: usize,
    pub latents: Vec<ExtendedLatent>,
}

pub fn write_latents(path: &Path, table: &LatentTable) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    w.write_all(LATENTS_MAGIC)?;
    w.write_all(&header_u32(table.layers)?)?;
    w.write_all(&header_u32(table.dim)?)?;
    w.write_all(&(table.latents.len() as u64).to_le_bytes())?;
    for code in &table.latents {
        if code.layers() != table.layers || code.dim() != table.dim {
            return Err(Error::DimensionMismatch {
                context: "latent table entry",
                expected: table.layers * table.dim,
                got: code.layers() * code.dim(),
            });
        }
        write_f64s(&mut w, code.as_flat())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_latents(path: &Path) -> Result<LatentTable> {
    let mut r = open(path)?;
    r.magic(LATENTS_MAGIC, path)?;
    let layers = r.u32()?;
    let dim = r.u32()?;
    let n = r.u64()?;
    let mut latents = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        latents.push(ExtendedLatent::from_flat(layers, dim, r.f64s(layers * dim)?)?);
    }
    r.finish(path)?;
    Ok(LatentTable { layers, dim, latents })
}

/// Feature vectors of one dimension (external or computed baselines).
pub fn write_features(path: &Path, dim: usize, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    w.write_all(FEATURES_MAGIC)?;
    w.write_all(&header_u32(dim)?)?;
    w.write_all(&(rows.len() as u64).to_le_bytes())?;
    for row in rows {
        crate::error::check_dim("feature row", dim, row.len())?;
        write_f64s(&mut w, row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut r = open(path)?;
    r.magic(FEATURES_MAGIC, path)?;
    let dim = r.u32()?;
    let n = r.u64()?;
    let rows = (0..n).map(|_| r.f64s(dim)).collect::<Result<Vec<_>>>()?;
    r.finish(path)?;
    Ok((dim, rows))
}

/// Raw PCA payload: `(mean, components, variances)`.
pub(crate) fn write_pca_parts(path: &Path, mean: &[f64], components: &[Vec<f64>], variances: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    w.write_all(PCA_MAGIC)?;
    w.write_all(&header_u32(mean.len())?)?;
    w.write_all(&header_u32(components.len())?)?;
    write_f64s(&mut w, mean)?;
    for c in components {
        write_f64s(&mut w, c)?;
    }
    write_f64s(&mut w, variances)?;
    w.flush()?;
    Ok(())
}

pub(crate) type PcaParts = (Vec<f64>, Vec<Vec<f64>>, Vec<f64>);

pub(crate) fn read_pca_parts(path: &Path) -> Result<PcaParts> {
    let mut r = open(path)?;
    r.magic(PCA_MAGIC, path)?;
    let p = r.u32()?;
    let k = r.u32()?;
    let mean = r.f64s(p)?;
    let components = (0..k).map(|_| r.f64s(p)).collect::<Result<Vec<_>>>()?;
    let variances = r.f64s(k)?;
    r.finish(path)?;
    Ok((mean, components, variances))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelRow {
    index: usize,
    attribute: String,
    clean: f64,
    noisy: f64,
    binary: i8,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
            _ => unreachable!("checked io error"),
        }
    } else {
        Error::Format(format!("{}: {e}", path.display()))
    }
}

/// Labels per attribute, indexed by item.
pub type LabelTable = BTreeMap<String, Vec<AttributeLabel>>;

/// Dataset as stored on disk. Images are not persisted; regenerate them from
/// the spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticSpec,
    pub latents: LatentTable,
    pub labels: LabelTable,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.latents.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.latents.is_empty()
    }

    pub fn labels_for(&self, attribute: &str) -> Result<&[AttributeLabel]> {
        self.labels
            .get(attribute)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownAttribute(attribute.to_owned()))
    }
}

pub fn write_dataset(dir: &Path, spec: &SyntheticSpec, records: &[Record]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(SPEC_FILE), serde_json::to_string_pretty(spec)?)?;
    write_latents(
        &dir.join(LATENTS_FILE),
        &LatentTable {
            layers: spec.layers,
            dim: spec.latent_dim,
            latents: records.iter().map(|r| r.extended.clone()).collect(),
        },
    )?;
    let rows: Vec<LabelRow> = records
        .iter()
        .enumerate()
        .flat_map(|(index, r)| {
            r.labels.iter().map(move |(name, l)| LabelRow {
                index,
                attribute: name.clone(),
                clean: l.clean,
                noisy: l.noisy,
                binary: l.binary,
            })
        })
        .collect();
    write_csv(&dir.join(LABELS_FILE), &rows)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let spec: SyntheticSpec = serde_json::from_str(&read_text(&dir.join(SPEC_FILE))?)?;
    spec.validate()?;
    let latents = read_latents(&dir.join(LATENTS_FILE))?;
    if latents.layers != spec.layers || latents.dim != spec.latent_dim {
        return Err(Error::Format("latent table shape disagrees with spec".into()));
    }
    let n = latents.latents.len();
    let mut labels: LabelTable = BTreeMap::new();
    let mut seen: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for row in read_csv::<LabelRow>(&dir.join(LABELS_FILE))? {
        if row.index >= n {
            return Err(Error::Format(format!("label index {} out of range", row.index)));
        }
        let col = labels.entry(row.attribute.clone()).or_insert_with(|| {
            vec![
                AttributeLabel {
                    clean: f64::NAN,
                    noisy: f64::NAN,
                    binary: 0
                };
                n
            ]
        });
        col[row.index] = AttributeLabel {
            clean: row.clean,
            noisy: row.noisy,
            binary: row.binary,
        };
        seen.entry(row.attribute).or_insert_with(|| vec![false; n])[row.index] = true;
    }
    for (name, flags) in &seen {
        if flags.iter().any(|f| !f) {
            return Err(Error::Format(format!("labels for `{name}` are incomplete")));
        }
    }
    Ok(Dataset { spec, latents, labels })
}

/// Reads a text file, naming it in the error.
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionRow {
    pub index: usize,
    pub final_loss: f64,
    pub iterations: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{sample_dataset, Generator};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::reference();
        let g = Generator::new(spec.clone()).unwrap();
        let records = sample_dataset(&g, 12, 3).unwrap();
        write_dataset(dir.path(), &spec, &records).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.spec, spec);
        assert_eq!(back.len(), 12);
        for (i, r) in records.iter().enumerate() {
            assert_eq!(back.latents.latents[i], r.extended);
            for (name, l) in &r.labels {
                assert_eq!(back.labels[name][i], *l);
            }
        }
        let bytes = std::fs::read(dir.path().join(LATENTS_FILE)).unwrap();
        assert_eq!(&bytes[..4], b"LRWS");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 12 * 8 * 16 * 8);
    }

    #[test]
    fn empty_table_keeps_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.f64");
        let t = LatentTable {
            layers: 3,
            dim: 2,
            latents: vec![],
        };
        write_latents(&path, &t).unwrap();
        assert_eq!(read_latents(&path).unwrap(), t);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.f64");
        std::fs::write(&path, b"LRFT\x02\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(read_latents(&path).is_err());
        assert!(read_features(&path).is_err());
        write_features(&path, 2, &[vec![1.0, -2.5]]).unwrap();
        assert_eq!(read_features(&path).unwrap(), (2, vec![vec![1.0, -2.5]]));
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_features(&path), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = read_latents(Path::new("/nonexistent/latents.f64")).unwrap_err();
        assert!(err.to_string().contains("latents.f64"));
    }
}
