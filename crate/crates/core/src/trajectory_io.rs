//! Binary trajectory container.
//!
//! All numbers are little-endian:
//!
//! ```text
//! "SLTV"  version:u32  n:u32  count:u64  dt:f64  seed:u64
//! modes:u32  { k1:i32 k2:i32 alpha:f64 } * modes
//! { time:f64  values:f64 * n² } * count
//! ```
//!
//! Values are stored row-major with the first index along `x`. Writers go to
//! a temporary file next to the target and rename it into place on
//! [`TrajectoryWriter::finish`].

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField};
use crate::noise::{NoiseMode, NoiseModel, Wavevector};
use crate::solver::{SnapshotSink, Trajectory, TrajectoryMeta};

pub const MAGIC: &[u8; 4] = b"SLTV";
pub const VERSION: u32 = 1;

/// Byte offset of the record count in the header.
const COUNT_OFFSET: u64 = 12;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Streaming writer; also a [`SnapshotSink`].
pub struct TrajectoryWriter {
    path: PathBuf,
    tmp: PathBuf,
    out: Option<BufWriter<File>>,
    grid: Grid,
    count: u64,
    last_time: Option<f64>,
}

impl std::fmt::Debug for TrajectoryWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrajectoryWriter")
            .field("path", &self.path)
            .field("count", &self.count)
            .finish()
    }
}

impl TrajectoryWriter {
    pub fn create(path: impl AsRef<Path>, meta: &TrajectoryMeta) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let tmp = temp_path(&path);
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        write_header(&mut out, meta, 0).map_err(io_err(&tmp))?;
        Ok(Self {
            path,
            tmp,
            out: Some(out),
            grid: meta.grid,
            count: 0,
            last_time: None,
        })
    }

    pub fn push(&mut self, t: f64, omega: &ScalarField) -> Result<()> {
        if omega.grid() != self.grid {
            return Err(Error::GridMismatch {
                left: self.grid.n(),
                right: omega.grid().n(),
            });
        }
        if let Some(last) = self.last_time {
            if !(t > last) {
                return Err(Error::Trajectory(format!(
                    "times must increase strictly: {t} after {last}"
                )));
            }
        }
        let out = self.out.as_mut().expect("writer is open until finish");
        let write = |out: &mut BufWriter<File>| -> io::Result<()> {
            out.write_f64::<LittleEndian>(t)?;
            for &v in omega.values() {
                out.write_f64::<LittleEndian>(v)?;
            }
            Ok(())
        };
        write(out).map_err(io_err(&self.tmp))?;
        self.count += 1;
        self.last_time = Some(t);
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Patches the record count, syncs, and renames into place.
    pub fn finish(mut self) -> Result<PathBuf> {
        let out = self.out.take().expect("writer is open until finish");
        let tmp = self.tmp.clone();
        let finish = |out: BufWriter<File>| -> io::Result<()> {
            let mut file = out.into_inner().map_err(|e| e.into_error())?;
            file.seek(SeekFrom::Start(COUNT_OFFSET))?;
            file.write_u64::<LittleEndian>(self.count)?;
            file.sync_all()
        };
        finish(out).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &self.path).map_err(io_err(&self.path))?;
        Ok(self.path.clone())
    }
}

impl Drop for TrajectoryWriter {
    fn drop(&mut self) {
        if self.out.take().is_some() {
            let _ = fs::remove_file(&self.tmp);
        }
    }
}

impl SnapshotSink for TrajectoryWriter {
    fn observe(&mut self, t: f64, omega: &ScalarField) -> Result<()> {
        self.push(t, omega)
    }
}

fn write_header(out: &mut impl Write, meta: &TrajectoryMeta, count: u64) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(meta.grid.n() as u32)?;
    out.write_u64::<LittleEndian>(count)?;
    out.write_f64::<LittleEndian>(meta.dt)?;
    out.write_u64::<LittleEndian>(meta.seed)?;
    let modes = meta.noise.modes();
    out.write_u32::<LittleEndian>(modes.len() as u32)?;
    for m in modes {
        out.write_i32::<LittleEndian>(m.k.k1)?;
        out.write_i32::<LittleEndian>(m.k.k2)?;
        out.write_f64::<LittleEndian>(m.alpha)?;
    }
    Ok(())
}

/// `n`, count, `dt`, seed and `(k1, k2, alpha)` rows after the version.
type RawHeader = (u32, u64, f64, u64, Vec<(i32, i32, f64)>);

/// Streaming reader over the records of a trajectory file.
pub struct TrajectoryReader {
    path: PathBuf,
    input: BufReader<File>,
    meta: TrajectoryMeta,
    count: u64,
    next: u64,
    offset: u64,
    last_time: Option<f64>,
    buf: Vec<u8>,
}

impl std::fmt::Debug for TrajectoryReader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrajectoryReader")
            .field("path", &self.path)
            .field("count", &self.count)
            .field("next", &self.next)
            .finish()
    }
}

impl TrajectoryReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(io_err(&path))?;
        let mut input = BufReader::with_capacity(1 << 20, file);
        let header_err = |path: &Path| {
            let path = path.to_path_buf();
            move |e: io::Error| {
                if e.kind() == io::ErrorKind::UnexpectedEof {
                    Error::TruncatedHeader { path }
                } else {
                    Error::Io { path, source: e }
                }
            }
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(header_err(&path))?;
        if &magic != MAGIC {
            return Err(Error::BadMagic { path });
        }
        let version = input.read_u32::<LittleEndian>().map_err(header_err(&path))?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion { path, version });
        }
        let read_rest = |input: &mut BufReader<File>| -> io::Result<RawHeader> {
            let n = input.read_u32::<LittleEndian>()?;
            let count = input.read_u64::<LittleEndian>()?;
            let dt = input.read_f64::<LittleEndian>()?;
            let seed = input.read_u64::<LittleEndian>()?;
            let m = input.read_u32::<LittleEndian>()?;
            let mut modes = Vec::new();
            for _ in 0..m {
                modes.push((
                    input.read_i32::<LittleEndian>()?,
                    input.read_i32::<LittleEndian>()?,
                    input.read_f64::<LittleEndian>()?,
                ));
            }
            Ok((n, count, dt, seed, modes))
        };
        let (n, count, dt, seed, modes) = read_rest(&mut input).map_err(header_err(&path))?;
        let grid = Grid::new(n as usize)?;
        let noise = NoiseModel::new(
            modes
                .into_iter()
                .map(|(k1, k2, alpha)| NoiseMode {
                    k: Wavevector::new(k1, k2),
                    alpha,
                })
                .collect(),
        );
        let offset = 4 + 4 + 4 + 8 + 8 + 8 + 4 + 16 * noise.modes().len() as u64;
        Ok(Self {
            path,
            input,
            meta: TrajectoryMeta {
                grid,
                dt,
                seed,
                noise,
            },
            count,
            next: 0,
            offset,
            last_time: None,
            buf: vec![0; 8 * (1 + grid.len())],
        })
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    /// Record count from the header.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Next record, `None` after the last one.
    pub fn next_record(&mut self) -> Result<Option<(f64, ScalarField)>> {
        if self.next == self.count {
            return Ok(None);
        }
        let record = self.next;
        let offset = self.offset;
        if let Err(e) = self.input.read_exact(&mut self.buf) {
            return Err(if e.kind() == io::ErrorKind::UnexpectedEof {
                Error::Truncated {
                    path: self.path.clone(),
                    record,
                    offset,
                }
            } else {
                Error::Io {
                    path: self.path.clone(),
                    source: e,
                }
            });
        }
        let mut words = self
            .buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let t = words.next().expect("record holds a time");
        let values: Vec<f64> = words.collect();
        if let Some(last) = self.last_time {
            if !(t > last) {
                return Err(Error::Trajectory(format!(
                    "{}: record {record} at offset {offset} has time {t} after {last}",
                    self.path.display()
                )));
            }
        }
        self.last_time = Some(t);
        self.next += 1;
        self.offset += self.buf.len() as u64;
        Ok(Some((t, ScalarField::new(self.meta.grid, values)?)))
    }

    /// Streams every remaining record into `sink`.
    pub fn replay(&mut self, sink: &mut impl SnapshotSink) -> Result<()> {
        while let Some((t, w)) = self.next_record()? {
            sink.observe(t, &w)?;
        }
        Ok(())
    }
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let mut w = TrajectoryWriter::create(path, traj.meta())?;
    for (t, omega) in traj.iter() {
        w.push(t, omega)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let mut r = TrajectoryReader::open(path)?;
    let mut traj = Trajectory::new(r.meta().clone());
    r.replay(&mut traj)?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::band_limited;

    fn sample(n: usize, count: usize) -> Trajectory {
        let g = Grid::new(n).unwrap();
        let meta = TrajectoryMeta {
            grid: g,
            dt: 1e-3,
            seed: 42,
            noise: NoiseModel::new(vec![
                NoiseMode { k: Wavevector::new(2, 4), alpha: 1e-3 },
                NoiseMode { k: Wavevector::new(-1, 3), alpha: 0.5 },
            ]),
        };
        let mut t = Trajectory::new(meta);
        for i in 0..count {
            t.push(i as f64 * 1e-3, band_limited(g, i as u64)).unwrap();
        }
        t
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.sltv");
        let traj = sample(16, 5);
        write_trajectory(&traj, &path).unwrap();
        assert_eq!(read_trajectory(&path).unwrap(), traj);
        let files: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1, "temporary file left behind");
    }

    #[test]
    fn truncation_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.sltv");
        write_trajectory(&sample(8, 4), &path).unwrap();
        let len = fs::metadata(&path).unwrap().len();
        let file = fs::OpenOptions::new().write(true).open(&path).unwrap();
        file.set_len(len - 10).unwrap();
        match read_trajectory(&path) {
            Err(Error::Truncated { record, .. }) => assert_eq!(record, 3),
            other => panic!("{other:?}"),
        }
        file.set_len(10).unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::TruncatedHeader { .. })));
    }

    #[test]
    fn header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.sltv");
        write_trajectory(&sample(8, 2), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 2;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_trajectory(&path),
            Err(Error::UnsupportedVersion { version: 2, .. })
        ));
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::BadMagic { .. })));
        assert!(matches!(
            read_trajectory(dir.path().join("missing.sltv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn dropped_writer_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let traj = sample(8, 2);
        let mut w = TrajectoryWriter::create(dir.path().join("a.sltv"), traj.meta()).unwrap();
        w.push(0.0, &traj.snapshots()[0]).unwrap();
        assert!(w.push(0.0, &traj.snapshots()[1]).is_err());
        drop(w);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
