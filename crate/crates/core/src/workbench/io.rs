//! Binary trajectory and control files.
//!
//! All numbers are little endian. A file starts with a preamble
//!
//! ```text
//! "NCHT" version:u32 nx:u32 ny:u32 lx:f64 ly:f64 dt:f64
//! n_snapshots:u32 n_controls:u32 config_hash:u64
//! ```
//!
//! followed by `n_snapshots` state records and `n_controls` control
//! records. Each record is a self-describing snapshot
//!
//! ```text
//! "NCHS" version:u32 nx:u32 ny:u32 field_count:u32 time:f64
//! per field: name_len:u8 name:[u8] role:u8 payload:[f64]
//! ```
//!
//! where role 0 is a cell field (`nx*ny` values), 1 the x faces
//! (`(nx+1)*ny`) and 2 the y faces (`nx*(ny+1)`). State records carry
//! `phi`, `u_x`, `u_y`, `pi`; control records carry `v_x`, `v_y`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::forward::{StateSnapshot, Trajectory};
use crate::geometry::{Grid, ScalarField, VectorField};

pub const FORMAT_VERSION: u32 = 1;
const TRAJ_MAGIC: &[u8; 4] = b"NCHT";
const SNAP_MAGIC: &[u8; 4] = b"NCHS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Center,
    FaceX,
    FaceY,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Center => 0,
            Role::FaceX => 1,
            Role::FaceY => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Role::Center),
            1 => Some(Role::FaceX),
            2 => Some(Role::FaceY),
            _ => None,
        }
    }

    pub fn len(self, nx: usize, ny: usize) -> usize {
        match self {
            Role::Center => nx * ny,
            Role::FaceX => (nx + 1) * ny,
            Role::FaceY => nx * (ny + 1),
        }
    }
}

/// One named field of a snapshot record.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub role: Role,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub nx: usize,
    pub ny: usize,
    pub time: f64,
    pub fields: Vec<Field>,
}

impl SnapshotRecord {
    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    fn take(&self, name: &str, role: Role, offset: u64) -> Result<&[f64]> {
        match self.field(name) {
            Some(f) if f.role == role => Ok(&f.values),
            Some(_) => Err(Error::Format {
                offset,
                message: format!("field {name} has the wrong role"),
            }),
            None => Err(Error::Format {
                offset,
                message: format!("record is missing field {name}"),
            }),
        }
    }
}

pub fn encode_snapshot(rec: &SnapshotRecord, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(SNAP_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(rec.nx as u32).to_le_bytes());
    out.extend_from_slice(&(rec.ny as u32).to_le_bytes());
    out.extend_from_slice(&(rec.fields.len() as u32).to_le_bytes());
    out.extend_from_slice(&rec.time.to_le_bytes());
    for f in &rec.fields {
        let name = f.name.as_bytes();
        if name.len() > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!("field name {} is too long", f.name)));
        }
        if f.values.len() != f.role.len(rec.nx, rec.ny) {
            return Err(Error::Shape(format!("field {} has {} values", f.name, f.values.len())));
        }
        out.push(name.len() as u8);
        out.extend_from_slice(name);
        out.push(f.role.tag());
        for v in &f.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

/// Byte cursor that reports the offset of every failure.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn fail(&self, message: String) -> Error {
        Error::Format {
            offset: self.offset(),
            message,
        }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if left < n {
            return Err(self.fail(format!("truncated file: need {n} bytes, {left} remain")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.bytes(4)?;
        if got != want {
            return Err(Error::Format {
                offset: at,
                message: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(want)
                ),
            });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(v));
        }
        Ok(())
    }
}

fn decode_snapshot(c: &mut Cursor<'_>) -> Result<SnapshotRecord> {
    c.magic(SNAP_MAGIC)?;
    c.version()?;
    let nx = c.u32()? as usize;
    let ny = c.u32()? as usize;
    let count = c.u32()? as usize;
    let time = c.f64()?;
    let mut fields = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let len = c.u8()? as usize;
        let name = String::from_utf8(c.bytes(len)?.to_vec()).map_err(|_| c.fail("field name is not UTF-8".into()))?;
        let tag = c.u8()?;
        let role = Role::from_tag(tag).ok_or_else(|| c.fail(format!("unknown field role {tag}")))?;
        let n = role.len(nx, ny);
        let raw = c.bytes(8 * n)?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        fields.push(Field { name, role, values });
    }
    Ok(SnapshotRecord { nx, ny, time, fields })
}

/// Parses a single snapshot record occupying the whole buffer.
pub fn decode_snapshot_bytes(buf: &[u8]) -> Result<SnapshotRecord> {
    let mut c = Cursor { buf, pos: 0 };
    let rec = decode_snapshot(&mut c)?;
    if c.pos != buf.len() {
        return Err(c.fail("trailing bytes after record".into()));
    }
    Ok(rec)
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        w.write_all(bytes)?;
        w.flush()?;
    }
    // temporary files are private by default; results are ordinary files
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

struct Preamble {
    grid: Grid,
    dt: f64,
    n_snapshots: usize,
    n_controls: usize,
    config_hash: u64,
}

fn encode_preamble(p: &Preamble, out: &mut Vec<u8>) {
    out.extend_from_slice(TRAJ_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.grid.nx as u32).to_le_bytes());
    out.extend_from_slice(&(p.grid.ny as u32).to_le_bytes());
    out.extend_from_slice(&p.grid.lx.to_le_bytes());
    out.extend_from_slice(&p.grid.ly.to_le_bytes());
    out.extend_from_slice(&p.dt.to_le_bytes());
    out.extend_from_slice(&(p.n_snapshots as u32).to_le_bytes());
    out.extend_from_slice(&(p.n_controls as u32).to_le_bytes());
    out.extend_from_slice(&p.config_hash.to_le_bytes());
}

fn decode_preamble(c: &mut Cursor<'_>) -> Result<Preamble> {
    c.magic(TRAJ_MAGIC)?;
    c.version()?;
    let at = c.offset();
    let nx = c.u32()? as usize;
    let ny = c.u32()? as usize;
    let lx = c.f64()?;
    let ly = c.f64()?;
    let grid = Grid::new(nx, ny, lx, ly).map_err(|e| Error::Format {
        offset: at,
        message: format!("bad grid: {e}"),
    })?;
    Ok(Preamble {
        grid,
        dt: c.f64()?,
        n_snapshots: c.u32()? as usize,
        n_controls: c.u32()? as usize,
        config_hash: c.u64()?,
    })
}

fn control_record(g: &Grid, t: f64, v: &VectorField) -> SnapshotRecord {
    SnapshotRecord {
        nx: g.nx,
        ny: g.ny,
        time: t,
        fields: vec![
            Field {
                name: "v_x".into(),
                role: Role::FaceX,
                values: v.x().to_vec(),
            },
            Field {
                name: "v_y".into(),
                role: Role::FaceY,
                values: v.y().to_vec(),
            },
        ],
    }
}

fn read_record(c: &mut Cursor<'_>, g: &Grid) -> Result<(SnapshotRecord, u64)> {
    let at = c.offset();
    let rec = decode_snapshot(c)?;
    if rec.nx != g.nx || rec.ny != g.ny {
        return Err(Error::Format {
            offset: at,
            message: format!("record is {}x{}, file grid is {}x{}", rec.nx, rec.ny, g.nx, g.ny),
        });
    }
    Ok((rec, at))
}

fn read_vector(rec: &SnapshotRecord, g: Grid, x: &str, y: &str, at: u64) -> Result<VectorField> {
    VectorField::from_components(
        g,
        rec.take(x, Role::FaceX, at)?.to_vec(),
        rec.take(y, Role::FaceY, at)?.to_vec(),
    )
}

pub fn encode_trajectory(traj: &Trajectory) -> Result<Vec<u8>> {
    let g = traj.grid;
    let mut out = Vec::new();
    encode_preamble(
        &Preamble {
            grid: g,
            dt: traj.dt,
            n_snapshots: traj.snapshots.len(),
            n_controls: traj.controls.len(),
            config_hash: traj.config_hash,
        },
        &mut out,
    );
    for s in &traj.snapshots {
        let rec = SnapshotRecord {
            nx: g.nx,
            ny: g.ny,
            time: s.t,
            fields: vec![
                Field {
                    name: "phi".into(),
                    role: Role::Center,
                    values: s.phi.values().to_vec(),
                },
                Field {
                    name: "u_x".into(),
                    role: Role::FaceX,
                    values: s.u.x().to_vec(),
                },
                Field {
                    name: "u_y".into(),
                    role: Role::FaceY,
                    values: s.u.y().to_vec(),
                },
                Field {
                    name: "pi".into(),
                    role: Role::Center,
                    values: s.pi.values().to_vec(),
                },
            ],
        };
        encode_snapshot(&rec, &mut out)?;
    }
    for (k, v) in traj.controls.iter().enumerate() {
        encode_snapshot(&control_record(&g, k as f64 * traj.dt, v), &mut out)?;
    }
    Ok(out)
}

pub fn decode_trajectory(buf: &[u8]) -> Result<Trajectory> {
    let mut c = Cursor { buf, pos: 0 };
    let p = decode_preamble(&mut c)?;
    let g = p.grid;
    let mut snapshots = Vec::with_capacity(p.n_snapshots.min(1 << 16));
    for _ in 0..p.n_snapshots {
        let (rec, at) = read_record(&mut c, &g)?;
        snapshots.push(StateSnapshot {
            t: rec.time,
            u: read_vector(&rec, g, "u_x", "u_y", at)?,
            phi: ScalarField::from_values(g, rec.take("phi", Role::Center, at)?.to_vec())?,
            pi: ScalarField::from_values(g, rec.take("pi", Role::Center, at)?.to_vec())?,
        });
    }
    let mut controls = Vec::with_capacity(p.n_controls.min(1 << 16));
    for _ in 0..p.n_controls {
        let (rec, at) = read_record(&mut c, &g)?;
        controls.push(read_vector(&rec, g, "v_x", "v_y", at)?);
    }
    if c.pos != buf.len() {
        return Err(c.fail("trailing bytes after last record".into()));
    }
    Ok(Trajectory {
        grid: g,
        dt: p.dt,
        snapshots,
        controls,
        config_hash: p.config_hash,
    })
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_atomic(path, &encode_trajectory(traj)?)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let t = decode_trajectory(&fs::read(path)?)?;
    t.validate()?;
    Ok(t)
}

/// A control time series stored on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSeries {
    pub grid: Grid,
    pub dt: f64,
    pub values: Vec<VectorField>,
}

/// Controls use the trajectory layout with no state records.
pub fn save_controls(path: &Path, grid: Grid, dt: f64, values: &[VectorField]) -> Result<()> {
    let mut out = Vec::new();
    encode_preamble(
        &Preamble {
            grid,
            dt,
            n_snapshots: 0,
            n_controls: values.len(),
            config_hash: 0,
        },
        &mut out,
    );
    for (k, v) in values.iter().enumerate() {
        grid.check_same(v.grid())?;
        encode_snapshot(&control_record(&grid, k as f64 * dt, v), &mut out)?;
    }
    write_atomic(path, &out)
}

/// Reads the controls of any trajectory or control file.
pub fn load_controls(path: &Path) -> Result<ControlSeries> {
    let t = decode_trajectory(&fs::read(path)?)?;
    Ok(ControlSeries {
        grid: t.grid,
        dt: t.dt,
        values: t.controls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_traj() -> Trajectory {
        let g = Grid::new(5, 4, 1.5, 1.0).unwrap();
        let snap = |t: f64| StateSnapshot {
            t,
            u: VectorField::from_fn(g, |x, y| x * y + t, |x, y| x - y * t),
            phi: ScalarField::from_fn(g, |x, y| (x + y * t).sin() / 3.0),
            pi: ScalarField::from_fn(g, |x, _| x - t),
        };
        Trajectory {
            grid: g,
            dt: 0.1,
            snapshots: vec![snap(0.0), snap(0.1)],
            controls: vec![VectorField::uniform(g, 0.25, -1.0 / 3.0)],
            config_hash: 0xdead_beef,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let t = sample_traj();
        let bytes = encode_trajectory(&t).unwrap();
        let back = decode_trajectory(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(encode_trajectory(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_trajectory(&sample_traj()).unwrap();
        for cut in [3, 20, 60, bytes.len() - 1] {
            match decode_trajectory(&bytes[..cut]) {
                Err(Error::Format { offset, message }) => {
                    assert!(message.contains("truncated"), "{message}");
                    assert!(offset <= cut as u64);
                }
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode_trajectory(&sample_traj()).unwrap();
        bytes[4..8].copy_from_slice(&999u32.to_le_bytes());
        assert!(matches!(decode_trajectory(&bytes), Err(Error::UnsupportedVersion(999))));
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut bytes = encode_trajectory(&sample_traj()).unwrap();
        bytes.push(0);
        assert!(matches!(decode_trajectory(&bytes), Err(Error::Format { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_trajectory(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn snapshot_record_round_trip() {
        let rec = SnapshotRecord {
            nx: 2,
            ny: 1,
            time: 0.5,
            fields: vec![Field {
                name: "phi".into(),
                role: Role::Center,
                values: vec![0.1, -0.2],
            }],
        };
        let mut buf = Vec::new();
        encode_snapshot(&rec, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"NCHS");
        assert_eq!(decode_snapshot_bytes(&buf).unwrap(), rec);
        let bad = SnapshotRecord {
            fields: vec![Field {
                name: "phi".into(),
                role: Role::FaceX,
                values: vec![0.0],
            }],
            ..rec
        };
        assert!(encode_snapshot(&bad, &mut Vec::new()).is_err());
    }

    #[test]
    fn files_are_written_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/run.nchs");
        let t = sample_traj();
        save_trajectory(&path, &t).unwrap();
        assert_eq!(load_trajectory(&path).unwrap(), t);
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
        let cpath = dir.path().join("v.nchs");
        save_controls(&cpath, t.grid, t.dt, &t.controls).unwrap();
        let c = load_controls(&cpath).unwrap();
        assert_eq!(c.values, t.controls);
        assert_eq!(c.dt, t.dt);
    }
}
