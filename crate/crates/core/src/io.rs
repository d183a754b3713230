//! File formats: frame stacks, images, masks and result tables.
//!
//! Frame stack (`.gfs`), all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "GFS1"
//!      4     2  version (1)
//!      6     4  width
//!     10     4  height
//!     14     4  frames
//!     18     1  dtype (1 = f64 LE)
//!     19     7  reserved, zero
//!     26     -  payload, frame-major, row-major within a frame
//! ```
//!
//! Every writer goes through a temporary file in the target directory that
//! is renamed into place, so readers never observe partial output.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::PixelMask;
use crate::simulator::FrameStack;

pub const STACK_MAGIC: [u8; 4] = *b"GFS1";
pub const STACK_VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;
pub const HEADER_LEN: usize = 26;

/// Write `path` atomically: `fill` writes into a temporary sibling file that
/// replaces `path` only once complete.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(Error::file(dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush().map_err(Error::file(path))?;
    }
    tmp.as_file().sync_all().map_err(Error::file(path))?;
    tmp.persist(path).map_err(|e| Error::file(path)(e.error))?;
    Ok(())
}

fn stack_header(width: usize, height: usize, frames: usize) -> Result<[u8; HEADER_LEN]> {
    let dim = |v: usize, name: &str| {
        u32::try_from(v).map_err(|_| Error::invalid(format!("{name} {v} does not fit the format")))
    };
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&STACK_MAGIC);
    h[4..6].copy_from_slice(&STACK_VERSION.to_le_bytes());
    h[6..10].copy_from_slice(&dim(width, "width")?.to_le_bytes());
    h[10..14].copy_from_slice(&dim(height, "height")?.to_le_bytes());
    h[14..18].copy_from_slice(&dim(frames, "frame count")?.to_le_bytes());
    h[18] = DTYPE_F64;
    Ok(h)
}

pub fn write_stack(path: impl AsRef<Path>, stack: &FrameStack) -> Result<()> {
    let path = path.as_ref();
    let header = stack_header(stack.width(), stack.height(), stack.frames())?;
    write_atomic(path, |w| {
        w.write_all(&header).map_err(Error::file(path))?;
        for v in stack.values() {
            w.write_all(&v.to_le_bytes()).map_err(Error::file(path))?;
        }
        Ok(())
    })
}

/// Frame-by-frame stack writer for stacks too large to hold in memory.
/// The file appears at its destination only after [`StackWriter::finish`].
pub struct StackWriter {
    path: std::path::PathBuf,
    writer: BufWriter<tempfile::NamedTempFile>,
    frame_len: usize,
    remaining: usize,
}

impl StackWriter {
    pub fn create(path: impl AsRef<Path>, width: usize, height: usize, frames: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let header = stack_header(width, height, frames)?;
        if width == 0 || height == 0 || frames == 0 {
            return Err(Error::invalid("frame stack dimensions must be positive"));
        }
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => Path::new(".").to_path_buf(),
        };
        let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(Error::file(&dir))?;
        let mut writer = BufWriter::new(tmp);
        writer.write_all(&header).map_err(Error::file(&path))?;
        Ok(Self {
            path,
            writer,
            frame_len: width * height,
            remaining: frames,
        })
    }

    pub fn push_frame(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.frame_len {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} values, expected {}",
                frame.len(),
                self.frame_len
            )));
        }
        if self.remaining == 0 {
            return Err(Error::invalid("more frames than declared in the header"));
        }
        for v in frame {
            self.writer.write_all(&v.to_le_bytes()).map_err(Error::file(&self.path))?;
        }
        self.remaining -= 1;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if self.remaining != 0 {
            return Err(Error::invalid(format!("{} frames missing", self.remaining)));
        }
        let path = self.path;
        let tmp = self
            .writer
            .into_inner()
            .map_err(|e| Error::file(&path)(e.into_error()))?;
        tmp.as_file().sync_all().map_err(Error::file(&path))?;
        tmp.persist(&path).map_err(|e| Error::file(&path)(e.error))?;
        Ok(())
    }
}

/// Dimensions stored in a frame-stack header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackHeader {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

impl StackHeader {
    pub fn payload_bytes(&self) -> u64 {
        self.width as u64 * self.height as u64 * self.frames as u64 * 8
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<StackHeader> {
    let magic: [u8; 4] = h[0..4].try_into().expect("4 bytes");
    if magic != STACK_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    if version != STACK_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let u = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().expect("4 bytes")) as usize;
    if h[18] != DTYPE_F64 {
        return Err(Error::UnsupportedDtype(h[18]));
    }
    if h[19..].iter().any(|&b| b != 0) {
        return Err(Error::Malformed {
            what: "frame stack header",
            detail: "reserved bytes are not zero".into(),
        });
    }
    let header = StackHeader {
        width: u(6),
        height: u(10),
        frames: u(14),
    };
    if header.width == 0 || header.height == 0 || header.frames == 0 {
        return Err(Error::Malformed {
            what: "frame stack header",
            detail: format!("zero dimension in {header:?}"),
        });
    }
    Ok(header)
}

/// Read only the header of a frame-stack file.
pub fn read_stack_header(path: impl AsRef<Path>) -> Result<StackHeader> {
    let path = path.as_ref();
    let mut f = File::open(path).map_err(Error::file(path))?;
    let len = f.metadata().map_err(Error::file(path))?.len();
    if len < HEADER_LEN as u64 {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: len,
        });
    }
    let mut h = [0u8; HEADER_LEN];
    f.read_exact(&mut h).map_err(Error::file(path))?;
    parse_header(&h)
}

pub fn read_stack(path: impl AsRef<Path>) -> Result<FrameStack> {
    let path = path.as_ref();
    let f = File::open(path).map_err(Error::file(path))?;
    let len = f.metadata().map_err(Error::file(path))?.len();
    if len < HEADER_LEN as u64 {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: len,
        });
    }
    let mut r = BufReader::new(f);
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h).map_err(Error::file(path))?;
    let header = parse_header(&h)?;
    let expected = HEADER_LEN as u64 + header.payload_bytes();
    if len != expected {
        return Err(if len < expected {
            Error::Truncated { expected, found: len }
        } else {
            Error::Malformed {
                what: "frame stack",
                detail: format!("{} trailing bytes", len - expected),
            }
        });
    }
    let n = header.width * header.height * header.frames;
    let mut values = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(Error::file(path))?;
        values.push(f64::from_le_bytes(buf));
    }
    FrameStack::new(header.width, header.height, header.frames, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// 16-bit binary PGM, linearly rescaled.
    Pgm16,
    /// Comma-separated values, one image row per line, exact.
    Csv,
}

impl ImageFormat {
    /// `.pgm` selects PGM, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("pgm") => ImageFormat::Pgm16,
            _ => ImageFormat::Csv,
        }
    }
}

/// A real-valued image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} image with {} values",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }
}

/// Affine map between stored 16-bit levels and values:
/// `value = offset + scale * level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmScale {
    pub offset: f64,
    pub scale: f64,
}

fn pgm_scale(values: &[f64]) -> PgmScale {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return PgmScale {
            offset: 0.0,
            scale: 1.0,
        };
    }
    let span = hi - lo;
    PgmScale {
        offset: lo,
        scale: if span > 0.0 { span / 65535.0 } else { 1.0 },
    }
}

pub fn export_image(path: impl AsRef<Path>, image: &Image, format: ImageFormat) -> Result<Option<PgmScale>> {
    let path = path.as_ref();
    match format {
        ImageFormat::Csv => {
            write_atomic(path, |w| {
                for row in image.values.chunks(image.width) {
                    let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    writeln!(w, "{}", line.join(",")).map_err(Error::file(path))?;
                }
                Ok(())
            })?;
            Ok(None)
        }
        ImageFormat::Pgm16 => {
            let s = pgm_scale(&image.values);
            write_atomic(path, |w| {
                write!(
                    w,
                    "P5\n# value = {:e} + {:e} * level\n{} {}\n65535\n",
                    s.offset, s.scale, image.width, image.height
                )
                .map_err(Error::file(path))?;
                for &v in &image.values {
                    let level = if v.is_finite() {
                        ((v - s.offset) / s.scale).round().clamp(0.0, 65535.0) as u16
                    } else {
                        0
                    };
                    w.write_all(&level.to_be_bytes()).map_err(Error::file(path))?;
                }
                Ok(())
            })?;
            Ok(Some(s))
        }
    }
}

pub fn read_image_csv(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let f = File::open(path).map_err(Error::file(path))?;
    let mut width = 0;
    let mut values = Vec::new();
    let mut height = 0;
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(Error::file(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Malformed {
                what: "image csv",
                detail: format!("line {}: {e}", n + 1),
            })?;
        if height == 0 {
            width = row.len();
        } else if row.len() != width {
            return Err(Error::Malformed {
                what: "image csv",
                detail: format!("line {} has {} values, expected {width}", n + 1, row.len()),
            });
        }
        values.extend(row);
        height += 1;
    }
    if height == 0 {
        return Err(Error::Malformed {
            what: "image csv",
            detail: "no data".into(),
        });
    }
    Image::new(width, height, values)
}

/// Whitespace-separated PGM header tokens, skipping `#` comments.
struct PgmHeader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl PgmHeader<'_> {
    fn token(&mut self) -> Result<&str> {
        loop {
            while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.data.len() && self.data[self.pos] == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(malformed_pgm("unexpected end of header"));
        }
        std::str::from_utf8(&self.data[start..self.pos]).map_err(|_| malformed_pgm("non-ascii header"))
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| malformed_pgm(&format!("expected a number, got `{t}`")))
    }
}

fn malformed_pgm(detail: &str) -> Error {
    Error::Malformed {
        what: "pgm",
        detail: detail.to_string(),
    }
}

/// Gray levels of a binary (`P5`) or plain (`P2`) PGM file.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(Error::file(path))?;
    let mut h = PgmHeader { data: &data, pos: 0 };
    let magic = h.token()?.to_string();
    let width = h.number()?;
    let height = h.number()?;
    let maxval = h.number()?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(malformed_pgm(&format!("bad header {width}x{height} max {maxval}")));
    }
    let n = width * height;
    let levels = match magic.as_str() {
        "P5" => {
            let start = h.pos + 1;
            let bpp = if maxval > 255 { 2 } else { 1 };
            let need = (start + n * bpp) as u64;
            if (data.len() as u64) < need {
                return Err(Error::Truncated {
                    expected: need,
                    found: data.len() as u64,
                });
            }
            let px = &data[start..start + n * bpp];
            if bpp == 1 {
                px.iter().map(|&b| b as u16).collect()
            } else {
                px.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
            }
        }
        "P2" => {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(h.number()? as u16);
            }
            v
        }
        other => return Err(malformed_pgm(&format!("unsupported magic `{other}`"))),
    };
    Ok((width, height, levels))
}

/// Mask from a PGM file: nonzero pixels are selected.
pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<PixelMask> {
    let (w, h, levels) = read_pgm(path)?;
    PixelMask::new(w, h, levels.iter().map(|&l| l != 0).collect())
}

/// 8-bit PGM with selected pixels at 255.
pub fn write_mask_pgm(path: impl AsRef<Path>, mask: &PixelMask) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, |w| {
        write!(w, "P5\n{} {}\n255\n", mask.width(), mask.height()).map_err(Error::file(path))?;
        let bytes: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
        w.write_all(&bytes).map_err(Error::file(path))
    })
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub protocol: String,
    pub eta: f64,
    pub n2: f64,
    #[serde(rename = "M")]
    pub modes: f64,
    pub delta_el: f64,
    #[serde(rename = "N_pixels")]
    pub n_pixels: usize,
    #[serde(rename = "H")]
    pub frames: usize,
    pub epsilon: f64,
    pub t_plus: f64,
    pub t_minus: f64,
    pub snr: f64,
    pub snr_err: f64,
}

pub const RESULT_COLUMNS: [&str; 12] = [
    "protocol", "eta", "n2", "M", "delta_el", "N_pixels", "H", "epsilon", "t_plus", "t_minus", "snr",
    "snr_err",
];

/// Write any serializable rows as CSV under an explicit header, which is
/// present even when there are no rows.
pub fn write_csv_rows<T: Serialize>(path: impl AsRef<Path>, header: &[&str], rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, |w| {
        let mut c = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        c.write_record(header)?;
        for r in rows {
            c.serialize(r)?;
        }
        c.flush().map_err(Error::file(path))?;
        Ok(())
    })
}

pub fn read_csv_rows<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(Error::file(path))?;
    let mut r = csv::Reader::from_reader(f);
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

pub fn write_results(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    write_csv_rows(path, &RESULT_COLUMNS, rows)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(Error::file(path))?;
    let mut r = csv::Reader::from_reader(f);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_COLUMNS {
        return Err(Error::Malformed {
            what: "results table",
            detail: format!("unexpected header {header:?}"),
        });
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}

/// Add rows to a results table, creating it if needed.
pub fn append_results(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let path = path.as_ref();
    let mut all = if path.exists() {
        read_results(path)?
    } else {
        Vec::new()
    };
    all.extend_from_slice(rows);
    write_results(path, &all)
}
