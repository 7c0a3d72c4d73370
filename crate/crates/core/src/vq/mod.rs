//! Vector quantization of the second-half Gaussian parameters.
//!
//! Scale, rotation, DC color and the 45 higher-order SH coefficients each get
//! their own codebook; opacity stays a raw 32-bit float. Only indices live in
//! the voxel records, the codebooks stay resident for decoding.

mod kmeans;

pub use kmeans::{kmeans_plus_plus, lloyd, nearest, train_kmeans, KMeansConfig, KMeansResult, TrainingReport};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{normalize_quat, Gaussian, SH_COEFFS};

pub const SH_REST_DIM: usize = 3 * (SH_COEFFS - 1);

const MAGIC: &[u8; 4] = b"GSVQ";
const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Scale = 0,
    Rotation = 1,
    Dc = 2,
    ShRest = 3,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [Attribute::Scale, Attribute::Rotation, Attribute::Dc, Attribute::ShRest];

    pub fn dim(self) -> usize {
        match self {
            Attribute::Scale | Attribute::Dc => 3,
            Attribute::Rotation => 4,
            Attribute::ShRest => SH_REST_DIM,
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    /// The attribute's vector for one Gaussian, as it is quantized.
    pub fn extract(self, g: &Gaussian) -> Vec<f32> {
        match self {
            Attribute::Scale => g.scale.to_vec(),
            Attribute::Rotation => canonical_quat(g.rotation).to_vec(),
            Attribute::Dc => g.sh[0].to_vec(),
            Attribute::ShRest => g.sh[1..].iter().flatten().copied().collect(),
        }
    }
}

/// `q` and `-q` are the same rotation; pick the representative with `w >= 0`.
pub fn canonical_quat(q: [f32; 4]) -> [f32; 4] {
    if q[0] < 0.0 {
        q.map(|v| -v)
    } else {
        q
    }
}

/// Codebook sizes per attribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryCounts {
    pub scale: usize,
    pub rotation: usize,
    pub dc: usize,
    pub sh_rest: usize,
}

impl Default for EntryCounts {
    fn default() -> Self {
        Self {
            scale: 4096,
            rotation: 4096,
            dc: 4096,
            sh_rest: 512,
        }
    }
}

impl EntryCounts {
    pub fn get(&self, attribute: Attribute) -> usize {
        match attribute {
            Attribute::Scale => self.scale,
            Attribute::Rotation => self.rotation,
            Attribute::Dc => self.dc,
            Attribute::ShRest => self.sh_rest,
        }
    }
}

/// Trained centroids for one attribute, `entry_count x dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub attribute: Attribute,
    entries: Vec<f32>,
    pub report: TrainingReport,
}

fn check_entry_count(k: usize) -> Result<()> {
    if k == 0 || !k.is_power_of_two() || k > 1 << 16 {
        return Err(Error::Precondition(format!(
            "codebook entry count {k} must be a power of two no larger than 65536"
        )));
    }
    Ok(())
}

impl Codebook {
    pub fn from_entries(attribute: Attribute, entries: Vec<f32>) -> Result<Self> {
        let dim = attribute.dim();
        if entries.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form {dim}-dim entries",
                entries.len()
            )));
        }
        check_entry_count(entries.len() / dim)?;
        if entries.iter().any(|v| v.is_nan()) {
            return Err(Error::Corruption("codebook contains NaN".into()));
        }
        Ok(Self {
            attribute,
            entries,
            report: TrainingReport::default(),
        })
    }

    /// k-means codebook over flat `vectors` of the attribute's dimension.
    /// Rotation centroids are renormalized afterwards and `report.final_mse`
    /// is recomputed against the stored centroids.
    pub fn train(attribute: Attribute, vectors: &[f32], config: &KMeansConfig) -> Result<Self> {
        check_entry_count(config.k)?;
        let dim = attribute.dim();
        let KMeansResult { mut centroids, mut report } = train_kmeans(vectors, dim, config)?;
        if attribute == Attribute::Rotation {
            for c in centroids.chunks_exact_mut(4) {
                let q = canonical_quat(normalize_quat([c[0], c[1], c[2], c[3]]));
                c.copy_from_slice(&q);
            }
        }
        let sse: f64 = vectors
            .chunks_exact(dim)
            .map(|v| nearest(&centroids, dim, v).1 as f64)
            .sum();
        report.final_mse = sse / (vectors.len() / dim) as f64;
        let mut book = Self::from_entries(attribute, centroids)?;
        book.report = report;
        Ok(book)
    }

    pub fn dim(&self) -> usize {
        self.attribute.dim()
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len() / self.dim()
    }

    /// Bits needed for an index into this book.
    pub fn index_bits(&self) -> u32 {
        self.entry_count().trailing_zeros()
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> Result<&[f32]> {
        let dim = self.dim();
        if index >= self.entry_count() {
            return Err(Error::Corruption(format!(
                "{:?} index {index} out of range for {} entries",
                self.attribute,
                self.entry_count()
            )));
        }
        Ok(&self.entries[index * dim..(index + 1) * dim])
    }

    /// Nearest centroid by Euclidean distance, lowest index on ties.
    pub fn quantize(&self, v: &[f32]) -> u16 {
        nearest(&self.entries, self.dim(), v).0 as u16
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.attribute.tag()])?;
        w.write_all(&(self.dim() as u16).to_le_bytes())?;
        w.write_all(&(self.entry_count() as u32).to_le_bytes())?;
        for v in &self.entries {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Corruption("codebook magic mismatch".into()));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != VERSION {
            return Err(Error::Corruption(format!("unsupported codebook version {version}")));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let attribute = Attribute::from_tag(tag[0])
            .ok_or_else(|| Error::Corruption(format!("unknown attribute tag {}", tag[0])))?;
        r.read_exact(&mut b2)?;
        let dim = u16::from_le_bytes(b2) as usize;
        if dim != attribute.dim() {
            return Err(Error::Corruption(format!("{attribute:?} codebook declares dim {dim}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let count = u32::from_le_bytes(b4) as usize;
        check_entry_count(count)?;
        let mut raw = vec![0u8; count * dim * 4];
        r.read_exact(&mut raw)?;
        let entries = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::from_entries(attribute, entries)
    }
}

/// Second-half parameters of one Gaussian (everything except the position).
#[derive(Clone, Debug, PartialEq)]
pub struct SecondHalf {
    pub scale: [f32; 3],
    pub rotation: [f32; 4],
    pub dc: [f32; 3],
    pub sh_rest: [f32; SH_REST_DIM],
    pub opacity: f32,
}

impl SecondHalf {
    /// Floats in the uncompressed layout.
    pub const FLOATS: usize = 3 + 4 + 3 + SH_REST_DIM + 1;

    pub fn of(g: &Gaussian) -> Self {
        let mut sh_rest = [0.0; SH_REST_DIM];
        for (dst, src) in sh_rest.iter_mut().zip(g.sh[1..].iter().flatten()) {
            *dst = *src;
        }
        Self {
            scale: g.scale,
            rotation: g.rotation,
            dc: g.sh[0],
            sh_rest,
            opacity: g.opacity,
        }
    }

    /// Reassembles a full Gaussian with the given position and id.
    pub fn into_gaussian(&self, id: u32, position: [f32; 3]) -> Gaussian {
        let mut sh = [[0.0; 3]; SH_COEFFS];
        sh[0] = self.dc;
        for (k, coeff) in sh.iter_mut().enumerate().skip(1) {
            coeff.copy_from_slice(&self.sh_rest[(k - 1) * 3..k * 3]);
        }
        Gaussian {
            id,
            position,
            scale: self.scale,
            rotation: self.rotation,
            opacity: self.opacity,
            sh,
        }
    }

    pub fn to_floats(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(Self::FLOATS);
        v.extend(self.scale);
        v.extend(self.rotation);
        v.extend(self.dc);
        v.extend(self.sh_rest);
        v.push(self.opacity);
        v
    }

    pub fn from_floats(v: &[f32]) -> Self {
        assert_eq!(v.len(), Self::FLOATS);
        Self {
            scale: v[0..3].try_into().unwrap(),
            rotation: v[3..7].try_into().unwrap(),
            dc: v[7..10].try_into().unwrap(),
            sh_rest: v[10..10 + SH_REST_DIM].try_into().unwrap(),
            opacity: v[10 + SH_REST_DIM],
        }
    }
}

/// Codebook indices plus the raw opacity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodedGaussian {
    pub scale_idx: u16,
    pub rot_idx: u16,
    pub dc_idx: u16,
    pub sh_idx: u16,
    pub opacity: f32,
}

impl EncodedGaussian {
    /// Serialized size: four byte-aligned 16-bit indices and a 32-bit opacity.
    pub const BYTES: usize = 12;

    pub fn to_bytes(&self) -> [u8; Self::BYTES] {
        let mut out = [0u8; Self::BYTES];
        out[0..2].copy_from_slice(&self.scale_idx.to_le_bytes());
        out[2..4].copy_from_slice(&self.rot_idx.to_le_bytes());
        out[4..6].copy_from_slice(&self.dc_idx.to_le_bytes());
        out[6..8].copy_from_slice(&self.sh_idx.to_le_bytes());
        out[8..12].copy_from_slice(&self.opacity.to_le_bytes());
        out
    }

    pub fn from_bytes(b: &[u8; Self::BYTES]) -> Self {
        Self {
            scale_idx: u16::from_le_bytes([b[0], b[1]]),
            rot_idx: u16::from_le_bytes([b[2], b[3]]),
            dc_idx: u16::from_le_bytes([b[4], b[5]]),
            sh_idx: u16::from_le_bytes([b[6], b[7]]),
            opacity: f32::from_le_bytes([b[8], b[9], b[10], b[11]]),
        }
    }
}

/// The four per-attribute codebooks.
#[derive(Clone, Debug, PartialEq)]
pub struct CodebookSet {
    pub scale: Codebook,
    pub rotation: Codebook,
    pub dc: Codebook,
    pub sh_rest: Codebook,
}

impl CodebookSet {
    pub fn new(scale: Codebook, rotation: Codebook, dc: Codebook, sh_rest: Codebook) -> Result<Self> {
        for (book, want) in [
            (&scale, Attribute::Scale),
            (&rotation, Attribute::Rotation),
            (&dc, Attribute::Dc),
            (&sh_rest, Attribute::ShRest),
        ] {
            if book.attribute != want {
                return Err(Error::DimensionMismatch(format!(
                    "expected a {want:?} codebook, got {:?}",
                    book.attribute
                )));
            }
        }
        Ok(Self {
            scale,
            rotation,
            dc,
            sh_rest,
        })
    }

    /// Trains one codebook per attribute over `gaussians`. Attribute `a` uses
    /// seed `seed + tag(a)` so the books are independent but reproducible.
    pub fn train<'a>(
        gaussians: impl IntoIterator<Item = &'a Gaussian> + Clone,
        counts: EntryCounts,
        seed: u64,
        max_iters: usize,
        tol: f64,
    ) -> Result<Self> {
        let mut books = Vec::with_capacity(4);
        for attribute in Attribute::ALL {
            let data: Vec<f32> = gaussians
                .clone()
                .into_iter()
                .flat_map(|g| attribute.extract(g))
                .collect();
            let config = KMeansConfig {
                k: counts.get(attribute),
                seed: seed.wrapping_add(attribute.tag() as u64),
                max_iters,
                tol,
            };
            log::debug!("training {attribute:?} codebook with {} entries", config.k);
            books.push(Codebook::train(attribute, &data, &config)?);
        }
        let sh_rest = books.pop().unwrap();
        let dc = books.pop().unwrap();
        let rotation = books.pop().unwrap();
        let scale = books.pop().unwrap();
        Self::new(scale, rotation, dc, sh_rest)
    }

    pub fn get(&self, attribute: Attribute) -> &Codebook {
        match attribute {
            Attribute::Scale => &self.scale,
            Attribute::Rotation => &self.rotation,
            Attribute::Dc => &self.dc,
            Attribute::ShRest => &self.sh_rest,
        }
    }

    /// Total bits of one encoded Gaussian if indices were bit-packed (opacity raw).
    pub fn packed_bits(&self) -> u32 {
        Attribute::ALL.iter().map(|a| self.get(*a).index_bits()).sum::<u32>() + 32
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for a in Attribute::ALL {
            self.get(a).write_to(&mut w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let scale = Codebook::read_from(&mut r)?;
        let rotation = Codebook::read_from(&mut r)?;
        let dc = Codebook::read_from(&mut r)?;
        let sh_rest = Codebook::read_from(&mut r)?;
        Self::new(scale, rotation, dc, sh_rest)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub fn encode(g: &Gaussian, books: &CodebookSet) -> EncodedGaussian {
    EncodedGaussian {
        scale_idx: books.scale.quantize(&Attribute::Scale.extract(g)),
        rot_idx: books.rotation.quantize(&Attribute::Rotation.extract(g)),
        dc_idx: books.dc.quantize(&Attribute::Dc.extract(g)),
        sh_idx: books.sh_rest.quantize(&Attribute::ShRest.extract(g)),
        opacity: g.opacity,
    }
}

pub fn decode(e: &EncodedGaussian, books: &CodebookSet) -> Result<SecondHalf> {
    let s = books.scale.entry(e.scale_idx as usize)?;
    let r = books.rotation.entry(e.rot_idx as usize)?;
    let d = books.dc.entry(e.dc_idx as usize)?;
    let sh = books.sh_rest.entry(e.sh_idx as usize)?;
    Ok(SecondHalf {
        scale: s.try_into().unwrap(),
        rotation: normalize_quat(r.try_into().unwrap()),
        dc: d.try_into().unwrap(),
        sh_rest: sh.try_into().unwrap(),
        opacity: e.opacity,
    })
}
