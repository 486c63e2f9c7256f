//! On-disk formats: EVT1 event streams (with a CSV alternative), VOX1 voxel
//! grids, and binary netpbm images.
//!
//! All multi-byte binary fields are little-endian except netpbm's 16-bit
//! samples, which that format fixes as big-endian. Writers are canonical so
//! write -> read -> write reproduces files byte for byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity};
use crate::image::Frame;
use crate::voxel::VoxelGrid;

const EVT1_MAGIC: &[u8; 4] = b"EVT1";
const VOX1_MAGIC: &[u8; 4] = b"VOX1";

/// Writes bytes via a temp file in the destination directory plus rename, so
/// a crash never leaves a half-written artifact at `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Cursor<'a> {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let offset = self.pos as u64;
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::format(
                offset,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes after payload", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn encode_events(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 16 * stream.len());
    out.extend_from_slice(EVT1_MAGIC);
    out.extend_from_slice(&stream.width().to_le_bytes());
    out.extend_from_slice(&stream.height().to_le_bytes());
    let (t_begin, t_end) = stream.window();
    out.extend_from_slice(&t_begin.to_le_bytes());
    out.extend_from_slice(&t_end.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.iter() {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.p.sign() as u8);
        out.extend_from_slice(&[0, 0, 0]);
    }
    out
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    let mut c = Cursor::new(bytes);
    c.expect_magic(EVT1_MAGIC)?;
    let width = c.u16("width")?;
    let height = c.u16("height")?;
    let t_begin = c.f64("t_begin")?;
    let t_end = c.f64("t_end")?;
    let count = c.u64("event count")?;
    let mut events = Vec::new();
    events.try_reserve_exact(count as usize).map_err(|_| {
        Error::format(24, format!("event count {count} exceeds available memory"))
    })?;
    let mut prev_t = f64::NEG_INFINITY;
    for i in 0..count {
        let record = c.pos as u64;
        let x = c.u16("event x")?;
        let y = c.u16("event y")?;
        let t = c.f64("event t")?;
        let p_raw = c.take(1, "event polarity")?[0] as i8;
        let pad = c.take(3, "record padding")?;
        if x >= width || y >= height {
            return Err(Error::format(
                record,
                format!("event {i} at ({x}, {y}) outside {width}x{height} sensor"),
            ));
        }
        if !(t.is_finite() && t >= t_begin && t <= t_end) {
            return Err(Error::format(
                record + 4,
                format!("event {i} time {t} outside window [{t_begin}, {t_end}]"),
            ));
        }
        if t < prev_t {
            return Err(Error::format(
                record + 4,
                format!("event {i} time {t} precedes previous event at {prev_t}"),
            ));
        }
        prev_t = t;
        let p = Polarity::from_i8(p_raw).ok_or_else(|| {
            Error::format(record + 12, format!("event {i} polarity {p_raw}, expected -1 or 1"))
        })?;
        if pad != [0, 0, 0] {
            return Err(Error::format(record + 13, format!("event {i} padding not zero")));
        }
        events.push(Event::new(x, y, t, p));
    }
    c.expect_end()?;
    EventStream::new(width, height, (t_begin, t_end), events)
}

pub fn write_events(stream: &EventStream, path: &Path) -> Result<()> {
    atomic_write(path, &encode_events(stream))
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    decode_events(&fs::read(path)?)
}

pub fn write_events_csv(stream: &EventStream, path: &Path) -> Result<()> {
    let mut out = String::from("x,y,t,p\n");
    for e in stream.iter() {
        // f64 Display is shortest-round-trip, so parsing recovers t exactly.
        out.push_str(&format!("{},{},{},{}\n", e.x, e.y, e.t, e.p.sign()));
    }
    atomic_write(path, out.as_bytes())
}

/// CSV carries no sensor size or window, so the caller supplies them; a
/// `None` window is inferred as [first t, last t] of the file.
pub fn read_events_csv(
    path: &Path,
    width: u16,
    height: u16,
    window: Option<(f64, f64)>,
) -> Result<EventStream> {
    let text = fs::read_to_string(path)?;
    let mut offset = 0u64;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim_end_matches('\r') != "x,y,t,p" {
        return Err(Error::format(0, format!("bad CSV header {header:?}, expected \"x,y,t,p\"")));
    }
    offset += header.len() as u64 + 1;
    let mut events = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line_start = offset;
        offset += line.len() as u64 + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(line_start, format!("line {}: {msg}", lineno + 2));
        let mut fields = line.split(',');
        let mut field = |name: &str| {
            fields
                .next()
                .ok_or_else(|| bad(format!("missing field {name}")))
        };
        let x: u16 = field("x")?.trim().parse().map_err(|e| bad(format!("x: {e}")))?;
        let y: u16 = field("y")?.trim().parse().map_err(|e| bad(format!("y: {e}")))?;
        let t: f64 = field("t")?.trim().parse().map_err(|e| bad(format!("t: {e}")))?;
        let p_raw: i8 = field("p")?.trim().parse().map_err(|e| bad(format!("p: {e}")))?;
        if fields.next().is_some() {
            return Err(bad("too many fields".to_string()));
        }
        let p = Polarity::from_i8(p_raw)
            .ok_or_else(|| bad(format!("polarity {p_raw}, expected -1 or 1")))?;
        events.push(Event::new(x, y, t, p));
    }
    let window = window.unwrap_or_else(|| {
        let lo = events.first().map_or(0.0, |e| e.t);
        let hi = events.last().map_or(0.0, |e| e.t);
        (lo, hi)
    });
    EventStream::from_unsorted(width, height, window, events)
}

pub fn encode_voxel(grid: &VoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 4 * grid.data().len());
    out.extend_from_slice(VOX1_MAGIC);
    out.extend_from_slice(&(grid.bins() as u16).to_le_bytes());
    out.extend_from_slice(&(grid.height() as u16).to_le_bytes());
    out.extend_from_slice(&(grid.width() as u16).to_le_bytes());
    let (t_begin, t_end) = grid.window();
    out.extend_from_slice(&t_begin.to_le_bytes());
    out.extend_from_slice(&t_end.to_le_bytes());
    for v in grid.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_voxel(bytes: &[u8]) -> Result<VoxelGrid> {
    let mut c = Cursor::new(bytes);
    c.expect_magic(VOX1_MAGIC)?;
    let bins = c.u16("bin count")? as usize;
    let height = c.u16("height")? as usize;
    let width = c.u16("width")? as usize;
    let t_begin = c.f64("t_begin")?;
    let t_end = c.f64("t_end")?;
    let n = bins * height * width;
    let raw = c.take(4 * n, "voxel data")?;
    c.expect_end()?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    VoxelGrid::from_parts(bins, height, width, (t_begin, t_end), data)
}

pub fn write_voxel(grid: &VoxelGrid, path: &Path) -> Result<()> {
    atomic_write(path, &encode_voxel(grid))
}

pub fn read_voxel(path: &Path) -> Result<VoxelGrid> {
    decode_voxel(&fs::read(path)?)
}

/// Encodes a frame as binary netpbm: P5 for one channel, P6 for three.
/// `deep` selects 16-bit samples (big-endian, as netpbm requires).
pub fn encode_image(frame: &Frame, deep: bool) -> Vec<u8> {
    let magic = if frame.channels() == 3 { "P6" } else { "P5" };
    let maxval: u32 = if deep { 65535 } else { 255 };
    let mut out =
        format!("{magic}\n{} {}\n{maxval}\n", frame.width(), frame.height()).into_bytes();
    for &v in frame.data() {
        let q = (v.clamp(0.0, 1.0) * f64::from(maxval)).round() as u32;
        if deep {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<Frame> {
    let mut pos = 0usize;
    // netpbm header tokens are separated by whitespace; '#' starts a comment
    // running to end of line.
    let mut token = |what: &str| -> Result<(u64, String)> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => {
                    return Err(Error::format(
                        pos as u64,
                        format!("truncated header: missing {what}"),
                    ))
                }
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::format(start as u64, format!("{what} is not ASCII")))?;
        Ok((start as u64, text.to_string()))
    };
    let (_, magic) = token("magic")?;
    let channels: usize = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(Error::format(0, format!("bad magic {magic:?}, expected P5 or P6"))),
    };
    let parse_dim = |(at, text): (u64, String), what: &str| -> Result<usize> {
        text.parse::<usize>()
            .map_err(|e| Error::format(at, format!("bad {what} {text:?}: {e}")))
    };
    let width = parse_dim(token("width")?, "width")?;
    let height = parse_dim(token("height")?, "height")?;
    let (max_at, max_text) = token("maxval")?;
    let maxval = parse_dim((max_at, max_text.clone()), "maxval")?;
    if maxval != 255 && maxval != 65535 {
        return Err(Error::format(max_at, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(0, format!("degenerate image {width}x{height}")));
    }
    pos += 1; // single whitespace byte after maxval, then raster
    let samples = width * height * channels;
    let bytes_per = if maxval == 65535 { 2 } else { 1 };
    if pos + samples * bytes_per > bytes.len() {
        return Err(Error::format(
            pos as u64,
            format!(
                "truncated raster: need {} bytes, {} remain",
                samples * bytes_per,
                bytes.len().saturating_sub(pos)
            ),
        ));
    }
    let raster = &bytes[pos..pos + samples * bytes_per];
    let scale = 1.0 / maxval as f64;
    let data: Vec<f64> = if bytes_per == 2 {
        raster
            .chunks_exact(2)
            .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) * scale)
            .collect()
    } else {
        raster.iter().map(|&b| f64::from(b) * scale).collect()
    };
    if data.iter().any(|&v| v > 1.0) {
        return Err(Error::format(pos as u64, "sample exceeds maxval".to_string()));
    }
    Frame::new(width, height, channels, data)
}

pub fn write_image(frame: &Frame, path: &Path, deep: bool) -> Result<()> {
    atomic_write(path, &encode_image(frame, deep))
}

pub fn read_image(path: &Path) -> Result<Frame> {
    decode_image(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, Polarity};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_stream(seed: u64, n: usize) -> EventStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events: Vec<Event> = (0..n)
            .map(|_| {
                Event::new(
                    rng.gen_range(0..64),
                    rng.gen_range(0..48),
                    rng.gen_range(-1.0..3.0),
                    if rng.gen_bool(0.5) {
                        Polarity::Positive
                    } else {
                        Polarity::Negative
                    },
                )
            })
            .collect();
        EventStream::from_unsorted(64, 48, (-1.0, 3.0), events).unwrap()
    }

    #[test]
    fn evt1_empty_round_trip() {
        let s = EventStream::empty(10, 7, (0.25, 1.75)).unwrap();
        let bytes = encode_events(&s);
        assert_eq!(bytes.len(), 32);
        let back = decode_events(&bytes).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn evt1_large_round_trip_byte_identical() {
        let s = random_stream(3, 100_000);
        let bytes = encode_events(&s);
        let back = decode_events(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_events(&back), bytes);
    }

    #[test]
    fn evt1_bad_magic_reports_offset_zero() {
        let s = random_stream(1, 5);
        let mut bytes = encode_events(&s);
        bytes[..4].copy_from_slice(b"XXXX");
        match decode_events(&bytes) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at offset 0, got {other:?}"),
        }
    }

    #[test]
    fn evt1_truncated_record_names_offset() {
        let s = random_stream(2, 3);
        let bytes = encode_events(&s);
        let cut = bytes.len() - 5;
        match decode_events(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset >= 32),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn evt1_out_of_bounds_coordinate_rejected() {
        let s = EventStream::new(
            4,
            4,
            (0.0, 1.0),
            vec![Event::new(1, 1, 0.5, Polarity::Positive)],
        )
        .unwrap();
        let mut bytes = encode_events(&s);
        bytes[32..34].copy_from_slice(&9u16.to_le_bytes()); // x of record 0
        match decode_events(&bytes) {
            Err(Error::Format { offset: 32, .. }) => {}
            other => panic!("expected format error at record start, got {other:?}"),
        }
    }

    #[test]
    fn evt1_bad_polarity_rejected() {
        let s = EventStream::new(
            4,
            4,
            (0.0, 1.0),
            vec![Event::new(1, 1, 0.5, Polarity::Positive)],
        )
        .unwrap();
        let mut bytes = encode_events(&s);
        bytes[44] = 3; // polarity byte of record 0
        assert!(matches!(decode_events(&bytes), Err(Error::Format { offset: 44, .. })));
    }

    #[test]
    fn evt1_path_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.evt1");
        let s = random_stream(7, 1000);
        write_events(&s, &path).unwrap();
        assert_eq!(read_events(&path).unwrap(), s);
    }

    #[test]
    fn csv_round_trip_with_explicit_window() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        let s = random_stream(11, 500);
        write_events_csv(&s, &path).unwrap();
        let back = read_events_csv(&path, 64, 48, Some((-1.0, 3.0))).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn csv_bad_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,x,y,p\n0.5,1,1,1\n").unwrap();
        assert!(matches!(
            read_events_csv(&path, 4, 4, None),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn vox1_round_trip_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..5 * 6 * 7)
            .map(|_| f64::from(rng.gen_range(-4.0f32..4.0)))
            .collect();
        let g = VoxelGrid::from_parts(5, 6, 7, (0.125, 2.5), data).unwrap();
        let bytes = encode_voxel(&g);
        let back = decode_voxel(&bytes).unwrap();
        assert_eq!(encode_voxel(&back), bytes);
        assert_eq!(back.window(), (0.125, 2.5));
    }

    #[test]
    fn vox1_trailing_bytes_rejected() {
        let g = VoxelGrid::zeros(2, 2, 2, (0.0, 1.0));
        let mut bytes = encode_voxel(&g);
        bytes.push(0);
        assert!(matches!(decode_voxel(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn pgm_round_trip_8bit() {
        let mut f = Frame::zeros(5, 4, 1);
        for (i, v) in f.data_mut().iter_mut().enumerate() {
            *v = (i as f64) / 19.0;
        }
        let bytes = encode_image(&f, false);
        assert!(bytes.starts_with(b"P5\n5 4\n255\n"));
        let back = decode_image(&bytes).unwrap();
        // 8-bit quantization: exact to within half a level.
        for (a, b) in f.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        assert_eq!(encode_image(&back, false), bytes);
    }

    #[test]
    fn ppm_round_trip_16bit() {
        let mut f = Frame::zeros(3, 2, 3);
        for (i, v) in f.data_mut().iter_mut().enumerate() {
            *v = (i as f64) / 17.0;
        }
        let bytes = encode_image(&f, true);
        assert!(bytes.starts_with(b"P6\n3 2\n65535\n"));
        let back = decode_image(&bytes).unwrap();
        for (a, b) in f.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn pgm_comment_in_header_parses() {
        let bytes = b"P5\n# a comment\n2 1\n255\n\x00\xff";
        let f = decode_image(bytes).unwrap();
        assert_eq!((f.width(), f.height(), f.channels()), (2, 1, 1));
        assert_eq!(f.data()[1], 1.0);
    }

    #[test]
    fn truncated_raster_is_format_error() {
        let bytes = b"P5\n4 4\n255\nabc";
        assert!(matches!(decode_image(bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn atomic_write_replaces_existing(){
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("file.bin");
        atomic_write(&path, b"old").unwrap();
        atomic_write(&path, b"new").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"new");
    }
}
