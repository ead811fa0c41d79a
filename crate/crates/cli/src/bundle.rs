//! On-disk model bundles.
//!
//! A bundle is a directory holding `manifest.json` and `arrays.bin`. The blob is
//! the concatenation of the arrays listed in the manifest, each stored row-major
//! as little-endian f64, in manifest order. The manifest records the sha256 of
//! the blob and of the point file the model was fitted from.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use cidm_core::ompgd::SemanticDecoder;
use cidm_core::sec::{Eigenfield, SecBasisConfig, SecFrame, StructureConstants};
use cidm_core::{CidmConfig, CidmModel, NystromProjector, PointCloud};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const ARRAYS: &str = "arrays.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub cidm: CidmConfig,
    pub n_points: usize,
    pub dim: usize,
    pub n_eigs: usize,
    pub l_trunc: usize,
    pub dataset_digest: String,
    pub label_periodic: Option<Vec<bool>>,
    pub sec: Option<SecBasisConfig>,
    pub arrays: Vec<ArrayEntry>,
    pub arrays_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub model: Arc<CidmModel>,
    pub dataset_digest: String,
    pub xhat: DMatrix<f64>,
    pub labels: Option<SemanticDecoder>,
    pub sec: Option<SecFrame>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Writer {
    entries: Vec<ArrayEntry>,
    blob: Vec<u8>,
}

impl Writer {
    fn push(&mut self, name: &str, rows: usize, cols: usize, values: impl IntoIterator<Item = f64>) {
        let before = self.blob.len();
        for v in values {
            self.blob.extend_from_slice(&v.to_le_bytes());
        }
        debug_assert_eq!(self.blob.len() - before, rows * cols * 8);
        self.entries.push(ArrayEntry {
            name: name.to_string(),
            rows,
            cols,
        });
    }

    fn matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        let (r, c) = m.shape();
        self.push(name, r, c, (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])));
    }
}

struct Reader<'a> {
    entries: &'a [ArrayEntry],
    blob: &'a [u8],
    next: usize,
    offset: usize,
}

impl Reader<'_> {
    fn take(&mut self, name: &str) -> Result<(usize, usize, Vec<f64>), CliError> {
        let e = self
            .entries
            .get(self.next)
            .ok_or_else(|| CliError::Bundle(format!("missing array '{name}'")))?;
        if e.name != name {
            return Err(CliError::Bundle(format!("expected array '{name}', found '{}'", e.name)));
        }
        let len = e.rows * e.cols * 8;
        let bytes = self
            .blob
            .get(self.offset..self.offset + len)
            .ok_or_else(|| CliError::Bundle(format!("array '{name}' runs past the end of the blob")))?;
        let values = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        self.next += 1;
        self.offset += len;
        Ok((e.rows, e.cols, values))
    }

    fn vector(&mut self, name: &str) -> Result<Vec<f64>, CliError> {
        Ok(self.take(name)?.2)
    }

    fn matrix(&mut self, name: &str) -> Result<DMatrix<f64>, CliError> {
        let (r, c, v) = self.take(name)?;
        Ok(DMatrix::from_row_slice(r, c, &v))
    }
}

impl Bundle {
    pub fn projector(&self) -> Result<NystromProjector, CliError> {
        Ok(NystromProjector::from_parts(self.model.clone(), self.xhat.clone())?)
    }

    pub fn l_trunc(&self) -> usize {
        self.xhat.nrows()
    }

    fn encode(&self) -> (Manifest, Vec<u8>) {
        let m = &self.model;
        let mut w = Writer {
            entries: Vec::new(),
            blob: Vec::new(),
        };
        let n = m.n_points();
        w.push("training", n, m.dim(), m.training().as_slice().iter().copied());
        w.push("knn_scale", n, 1, m.knn_scale().iter().copied());
        w.push("degree", n, 1, m.degree().iter().copied());
        w.push("base_degree", n, 1, m.base_degree().iter().copied());
        w.push("eig_xi", m.n_eigs(), 1, m.eig_xi().iter().copied());
        w.matrix("eig_phi", m.eig_phi());
        w.matrix("xhat", &self.xhat);
        if let Some(d) = &self.labels {
            w.matrix("label_coeffs", &d.coeffs);
        }
        if let Some(f) = &self.sec {
            let c = &f.c;
            w.push("sec_c", c.rows() * c.rows(), c.m_inner(), c.as_slice().iter().copied());
            w.push("sec_xi", f.xi.len(), 1, f.xi.iter().copied());
            w.matrix("sec_g", &f.g);
            w.matrix("sec_e", &f.e);
            w.matrix("sec_u_tilde", &f.u_tilde);
            w.push("field_eta", f.fields.len(), 1, f.fields.iter().map(|x| x.eta));
            let width = f.config.m_basis * f.config.m_basis;
            w.push("field_coeffs", f.fields.len(), width, f.fields.iter().flat_map(|x| x.coeffs.iter().copied()));
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            cidm: *m.config(),
            n_points: n,
            dim: m.dim(),
            n_eigs: m.n_eigs(),
            l_trunc: self.l_trunc(),
            dataset_digest: self.dataset_digest.clone(),
            label_periodic: self.labels.as_ref().map(|d| d.periodic.clone()),
            sec: self.sec.as_ref().map(|f| f.config),
            arrays: w.entries,
            arrays_sha256: sha256_hex(&w.blob),
        };
        (manifest, w.blob)
    }

    pub fn manifest(&self) -> Manifest {
        self.encode().0
    }

    pub fn save(&self, dir: &Path, force: bool) -> Result<(), CliError> {
        if dir.exists() && !force {
            return Err(CliError::Exists(dir.display().to_string()));
        }
        let (manifest, blob) = self.encode();
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        text.push('\n');
        let mp = dir.join(MANIFEST);
        fs::write(&mp, text).map_err(|e| CliError::io(&mp, e))?;
        let ap = dir.join(ARRAYS);
        fs::write(&ap, blob).map_err(|e| CliError::io(&ap, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let mp = dir.join(MANIFEST);
        let text = fs::read_to_string(&mp).map_err(|e| CliError::io(&mp, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::Bundle(format!("{}: {e}", mp.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CliError::Bundle(format!("unsupported format version {}", manifest.format_version)));
        }
        let ap = dir.join(ARRAYS);
        let blob = fs::read(&ap).map_err(|e| CliError::io(&ap, e))?;
        if sha256_hex(&blob) != manifest.arrays_sha256 {
            return Err(CliError::Bundle("array blob does not match the manifest digest".into()));
        }
        let mut r = Reader {
            entries: &manifest.arrays,
            blob: &blob,
            next: 0,
            offset: 0,
        };
        let training = PointCloud::new(r.vector("training")?, manifest.n_points, manifest.dim)?;
        let knn_scale = r.vector("knn_scale")?;
        let degree = r.vector("degree")?;
        let base_degree = r.vector("base_degree")?;
        let eig_xi = r.vector("eig_xi")?;
        let eig_phi = r.matrix("eig_phi")?;
        let model = CidmModel::from_parts(training, manifest.cidm, knn_scale, degree, base_degree, eig_xi, eig_phi)?;
        let xhat = r.matrix("xhat")?;
        let labels = match &manifest.label_periodic {
            Some(p) => Some(SemanticDecoder::from_parts(p.clone(), r.matrix("label_coeffs")?)?),
            None => None,
        };
        let sec = match manifest.sec {
            Some(config) => {
                let (rr, mi, data) = r.take("sec_c")?;
                let rows = (rr as f64).sqrt().round() as usize;
                let c = StructureConstants::from_parts(rows, mi, data)?;
                let xi = r.vector("sec_xi")?;
                let g = r.matrix("sec_g")?;
                let e = r.matrix("sec_e")?;
                let u_tilde = r.matrix("sec_u_tilde")?;
                let eta = r.vector("field_eta")?;
                let coeffs = r.matrix("field_coeffs")?;
                let fields = eta
                    .iter()
                    .enumerate()
                    .map(|(k, &eta)| Eigenfield {
                        eta,
                        coeffs: coeffs.row(k).iter().copied().collect(),
                    })
                    .collect();
                Some(SecFrame {
                    config,
                    c,
                    xi,
                    g,
                    e,
                    u_tilde,
                    fields,
                })
            }
            None => None,
        };
        if r.next != manifest.arrays.len() || r.offset != blob.len() {
            return Err(CliError::Bundle("array blob has trailing data".into()));
        }
        Ok(Self {
            model: Arc::new(model),
            dataset_digest: manifest.dataset_digest,
            xhat,
            labels,
            sec,
        })
    }
}
