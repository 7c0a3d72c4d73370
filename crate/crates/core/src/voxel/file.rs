//! Little-endian voxel-store file:
//!
//! ```text
//! "GSVX" | version u16 | fine mode u8 (0 raw, 1 encoded) | edge f32 | origin 3 x f32
//! | dims 3 x u32 | voxel count u32 | renaming table: voxel count x u64
//! | per voxel: count u32, coarse block, fine block, id block (u32 each)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CoarseEntry, FineBlock, VoxelGrid, VoxelRecord, VoxelStore};
use crate::error::{Error, Result};
use crate::vq::{EncodedGaussian, SecondHalf};

const MAGIC: &[u8; 4] = b"GSVX";
const VERSION: u16 = 1;

fn put_f32s<W: Write>(w: &mut W, vs: &[f32]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Corruption(format!("truncated voxel store: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }
    fn f32s<const N: usize>(&mut self) -> Result<[f32; N]> {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = self.f32()?;
        }
        Ok(out)
    }
}

impl VoxelStore {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let encoded = self.is_encoded();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[encoded as u8])?;
        put_f32s(&mut w, &[self.grid.edge])?;
        put_f32s(&mut w, &self.grid.origin)?;
        for d in self.grid.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for vid in &self.grid.occupied {
            w.write_all(&vid.to_le_bytes())?;
        }
        for r in &self.records {
            w.write_all(&(r.count() as u32).to_le_bytes())?;
            for c in &r.coarse {
                put_f32s(&mut w, &c.position)?;
                put_f32s(&mut w, &[c.max_scale])?;
            }
            match &r.fine {
                FineBlock::Raw(halves) => {
                    for h in halves {
                        put_f32s(&mut w, &h.to_floats())?;
                    }
                }
                FineBlock::Encoded(es) => {
                    for e in es {
                        w.write_all(&e.to_bytes())?;
                    }
                }
            }
            for id in &r.ids {
                w.write_all(&id.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(inner: R) -> Result<Self> {
        let mut r = Reader { inner };
        if &r.bytes::<4>()? != MAGIC {
            return Err(Error::Corruption("voxel store magic mismatch".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Corruption(format!("unsupported voxel store version {version}")));
        }
        let encoded = match r.u8()? {
            0 => false,
            1 => true,
            m => return Err(Error::Corruption(format!("unknown fine-block mode {m}"))),
        };
        let edge = r.f32()?;
        let origin = r.f32s::<3>()?;
        let dims = [r.u32()?, r.u32()?, r.u32()?];
        let voxel_count = r.u32()? as usize;
        let occupied = (0..voxel_count).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if occupied.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Corruption("renaming table is not strictly ascending".into()));
        }

        let mut records = Vec::with_capacity(voxel_count);
        for vid_r in 0..voxel_count {
            let count = r.u32()? as usize;
            let coarse = (0..count)
                .map(|_| {
                    Ok(CoarseEntry {
                        position: r.f32s::<3>()?,
                        max_scale: r.f32()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let fine = if encoded {
                FineBlock::Encoded(
                    (0..count)
                        .map(|_| Ok(EncodedGaussian::from_bytes(&r.bytes()?)))
                        .collect::<Result<_>>()?,
                )
            } else {
                FineBlock::Raw(
                    (0..count)
                        .map(|_| Ok(SecondHalf::from_floats(&r.f32s::<{ SecondHalf::FLOATS }>()?)))
                        .collect::<Result<_>>()?,
                )
            };
            let ids = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            records.push(VoxelRecord {
                vid_r: vid_r as u32,
                coarse,
                fine,
                ids,
            });
        }
        Ok(VoxelStore {
            grid: VoxelGrid {
                origin,
                edge,
                dims,
                occupied,
            },
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
