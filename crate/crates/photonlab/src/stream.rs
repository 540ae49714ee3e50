//! PTS photon streams: a fixed little-endian binary layout for time-tagged
//! detection records, with a streaming decoder that enforces ordering.
//!
//! Layout: `"PTS1"` · version u32 · sync_period_ps u64 · resolution_ps u64 ·
//! n_channels u8 · n_records u64, followed by `n_records` 16-byte records of
//! pulse_index u64 · micro_time u32 · channel u8 · 3 zero bytes.

use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PTS1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 33;
pub const RECORD_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bad magic: expected PTS1, found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("header truncated after {0} of 33 bytes")]
    TruncatedHeader(usize),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("record {index} truncated")]
    TruncatedRecord { index: u64 },
    #[error("record {index} is out of order")]
    OutOfOrder { index: u64 },
    #[error("record {index} has channel {channel} but the stream has {n_channels}")]
    ChannelOutOfRange {
        index: u64,
        channel: u8,
        n_channels: u8,
    },
    #[error("record {index}: micro time {micro_time} exceeds the sync period")]
    MicroTimeOverflow { index: u64, micro_time: u32 },
    #[error("record {index} has non-zero reserved bytes")]
    ReservedBytes { index: u64 },
    #[error("stream is empty")]
    EmptyStream,
    #[error("channel balance needs a two-channel stream, got {0} channels")]
    NotTwoChannels(u8),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// File-level metadata. Times are integer picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub version: u32,
    pub sync_period_ps: u64,
    pub resolution_ps: u64,
    pub n_channels: u8,
    pub n_records: u64,
}

impl StreamHeader {
    pub fn new(sync_period_ps: u64, resolution_ps: u64, n_channels: u8) -> Self {
        StreamHeader {
            version: FORMAT_VERSION,
            sync_period_ps,
            resolution_ps,
            n_channels,
            n_records: 0,
        }
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.version != FORMAT_VERSION {
            return Err(StreamError::UnsupportedVersion(self.version));
        }
        if self.sync_period_ps == 0 || self.resolution_ps == 0 {
            return Err(StreamError::InvalidHeader(
                "sync period and resolution must be positive".into(),
            ));
        }
        if self.resolution_ps > self.sync_period_ps {
            return Err(StreamError::InvalidHeader(format!(
                "resolution {} ps exceeds sync period {} ps",
                self.resolution_ps, self.sync_period_ps
            )));
        }
        if self.n_channels == 0 {
            return Err(StreamError::InvalidHeader("no channels".into()));
        }
        Ok(())
    }

    /// Number of micro-time units that fit in one sync period.
    pub fn micro_slots(&self) -> u64 {
        self.sync_period_ps.div_ceil(self.resolution_ps)
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&self.version.to_le_bytes());
        b[8..16].copy_from_slice(&self.sync_period_ps.to_le_bytes());
        b[16..24].copy_from_slice(&self.resolution_ps.to_le_bytes());
        b[24] = self.n_channels;
        b[25..33].copy_from_slice(&self.n_records.to_le_bytes());
        b
    }
}

/// One detection: the laser pulse that produced it, the delay after that
/// pulse in resolution units, and the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhotonRecord {
    pub pulse_index: u64,
    pub micro_time: u32,
    pub channel: u8,
}

impl PhotonRecord {
    pub fn new(pulse_index: u64, micro_time: u32, channel: u8) -> Self {
        PhotonRecord {
            pulse_index,
            micro_time,
            channel,
        }
    }

    /// Absolute arrival time in picoseconds.
    #[inline]
    pub fn time_ps(&self, header: &StreamHeader) -> u64 {
        self.pulse_index * header.sync_period_ps + self.micro_time as u64 * header.resolution_ps
    }

    pub fn to_bytes(&self) -> [u8; RECORD_LEN] {
        let mut b = [0u8; RECORD_LEN];
        b[0..8].copy_from_slice(&self.pulse_index.to_le_bytes());
        b[8..12].copy_from_slice(&self.micro_time.to_le_bytes());
        b[12] = self.channel;
        b
    }
}

/// Header plus records in non-decreasing (pulse, micro time, channel) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotonStream {
    pub header: StreamHeader,
    pub records: Vec<PhotonRecord>,
}

impl PhotonStream {
    /// Builds a stream, checking every record invariant. `n_records` is set
    /// from the record count.
    pub fn new(mut header: StreamHeader, records: Vec<PhotonRecord>) -> Result<Self, StreamError> {
        header.n_records = records.len() as u64;
        header.validate()?;
        let mut check = RecordCheck::new(header);
        for (i, r) in records.iter().enumerate() {
            check.accept(i as u64, r)?;
        }
        Ok(PhotonStream { header, records })
    }

    pub fn empty(header: StreamHeader) -> Self {
        PhotonStream {
            header: StreamHeader {
                n_records: 0,
                ..header
            },
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Keeps the header and replaces the records, which must already be a
    /// subsequence of a valid stream.
    pub fn with_records(&self, records: Vec<PhotonRecord>) -> PhotonStream {
        PhotonStream {
            header: StreamHeader {
                n_records: records.len() as u64,
                ..self.header
            },
            records,
        }
    }

    /// Number of pulses between the first and last record, inclusive.
    pub fn pulse_span(&self) -> u64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.pulse_index - a.pulse_index + 1,
            _ => 0,
        }
    }

    pub fn count_channel(&self, channel: u8) -> usize {
        self.records.iter().filter(|r| r.channel == channel).count()
    }
}

struct RecordCheck {
    header: StreamHeader,
    last: Option<PhotonRecord>,
}

impl RecordCheck {
    fn new(header: StreamHeader) -> Self {
        RecordCheck { header, last: None }
    }

    fn accept(&mut self, index: u64, r: &PhotonRecord) -> Result<(), StreamError> {
        if r.channel >= self.header.n_channels {
            return Err(StreamError::ChannelOutOfRange {
                index,
                channel: r.channel,
                n_channels: self.header.n_channels,
            });
        }
        if r.micro_time as u64 * self.header.resolution_ps >= self.header.sync_period_ps {
            return Err(StreamError::MicroTimeOverflow {
                index,
                micro_time: r.micro_time,
            });
        }
        if let Some(prev) = self.last {
            if *r < prev {
                return Err(StreamError::OutOfOrder { index });
            }
        }
        self.last = Some(*r);
        Ok(())
    }
}

/// Parses and validates a header from the first 33 bytes of `bytes`.
pub fn read_header(bytes: &[u8]) -> Result<StreamHeader, StreamError> {
    if bytes.len() >= 4 && bytes[0..4] != MAGIC {
        return Err(StreamError::BadMagic(bytes[0..4].try_into().unwrap()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(StreamError::TruncatedHeader(bytes.len()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let header = StreamHeader {
        version: u32_at(4),
        sync_period_ps: u64_at(8),
        resolution_ps: u64_at(16),
        n_channels: bytes[24],
        n_records: u64_at(25),
    };
    header.validate()?;
    Ok(header)
}

/// Reads a header from a byte source, leaving it positioned at the first
/// record.
pub fn read_header_from<R: Read>(source: &mut R) -> Result<StreamHeader, StreamError> {
    let mut buf = [0u8; HEADER_LEN];
    let got = read_full(source, &mut buf)?;
    read_header(&buf[..got])
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match source.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Streaming record decoder. Holds one record of state regardless of stream
/// length; every record is validated as it is read.
pub struct RecordReader<R: Read> {
    source: R,
    check: RecordCheck,
    index: u64,
    failed: bool,
}

impl<R: Read> RecordReader<R> {
    pub fn new(source: R, header: StreamHeader) -> Self {
        RecordReader {
            source,
            check: RecordCheck::new(header),
            index: 0,
            failed: false,
        }
    }

    pub fn header(&self) -> &StreamHeader {
        &self.check.header
    }

    fn next_record(&mut self) -> Result<PhotonRecord, StreamError> {
        let mut buf = [0u8; RECORD_LEN];
        let got = read_full(&mut self.source, &mut buf)?;
        if got < RECORD_LEN {
            return Err(StreamError::TruncatedRecord { index: self.index });
        }
        if buf[13..16] != [0, 0, 0] {
            return Err(StreamError::ReservedBytes { index: self.index });
        }
        let r = PhotonRecord {
            pulse_index: u64::from_le_bytes(buf[0..8].try_into().unwrap()),
            micro_time: u32::from_le_bytes(buf[8..12].try_into().unwrap()),
            channel: buf[12],
        };
        self.check.accept(self.index, &r)?;
        Ok(r)
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<PhotonRecord, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.index >= self.check.header.n_records {
            return None;
        }
        let r = self.next_record();
        if r.is_err() {
            self.failed = true;
        }
        self.index += 1;
        Some(r)
    }
}

/// Decodes exactly `header.n_records` records following the header.
pub fn decode_records<R: Read>(
    source: R,
    header: StreamHeader,
) -> Result<PhotonStream, StreamError> {
    let cap = header.n_records.min(1 << 24) as usize;
    let mut records = Vec::with_capacity(cap);
    for r in RecordReader::new(source, header) {
        records.push(r?);
    }
    Ok(PhotonStream { header, records })
}

/// Reads a complete stream (header and records) from a byte source.
pub fn read_stream<R: Read>(mut source: R) -> Result<PhotonStream, StreamError> {
    let header = read_header_from(&mut source)?;
    decode_records(source, header)
}

/// Writes the stream and returns the number of bytes written.
pub fn write_stream<W: Write>(stream: &PhotonStream, sink: W) -> Result<u64, StreamError> {
    let mut sink = io::BufWriter::new(sink);
    let header = StreamHeader {
        n_records: stream.records.len() as u64,
        ..stream.header
    };
    sink.write_all(&header.to_bytes())?;
    for r in &stream.records {
        sink.write_all(&r.to_bytes())?;
    }
    sink.flush()?;
    Ok((HEADER_LEN + RECORD_LEN * stream.records.len()) as u64)
}

/// In-memory encoding of a stream.
pub fn encode(stream: &PhotonStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.records.len());
    write_stream(stream, &mut out).expect("writing to a Vec cannot fail");
    out
}

/// Share of detections per detector, and the coincidence efficiency relative
/// to a perfect 50/50 split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelBalance {
    pub fraction_per_channel: Vec<f64>,
    pub relative_efficiency: f64,
    /// Set when one detector recorded nothing.
    pub empty_channel: bool,
}

/// Coincidence probability of a split with fraction `x` on the first
/// detector, relative to the balanced split: `4x(1−x)`.
pub fn relative_efficiency(x: f64) -> f64 {
    4.0 * x * (1.0 - x)
}

pub fn channel_balance(stream: &PhotonStream) -> Result<ChannelBalance, StreamError> {
    if stream.header.n_channels != 2 {
        return Err(StreamError::NotTwoChannels(stream.header.n_channels));
    }
    if stream.is_empty() {
        return Err(StreamError::EmptyStream);
    }
    let n0 = stream.count_channel(0);
    let total = stream.len();
    let x = n0 as f64 / total as f64;
    Ok(ChannelBalance {
        fraction_per_channel: vec![x, 1.0 - x],
        relative_efficiency: relative_efficiency(x),
        empty_channel: n0 == 0 || n0 == total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> StreamHeader {
        StreamHeader::new(200_000, 16, 2)
    }

    fn sample() -> PhotonStream {
        let recs = vec![
            PhotonRecord::new(1, 10, 0),
            PhotonRecord::new(1, 10, 1),
            PhotonRecord::new(1, 400, 0),
            PhotonRecord::new(7, 0, 1),
        ];
        PhotonStream::new(header(), recs).unwrap()
    }

    #[test]
    fn header_is_33_bytes_and_parses_back() {
        let mut h = header();
        h.n_records = 12;
        let b = h.to_bytes();
        assert_eq!(b.len(), 33);
        assert_eq!(read_header(&b).unwrap(), h);
        assert_eq!(read_header(&b).unwrap().sync_period_ps, 200_000);
    }

    #[test]
    fn corrupted_magic() {
        let mut b = header().to_bytes();
        b[0] = b'X';
        assert!(matches!(read_header(&b), Err(StreamError::BadMagic(_))));
    }

    #[test]
    fn short_header() {
        let b = header().to_bytes();
        assert!(matches!(
            read_header(&b[..20]),
            Err(StreamError::TruncatedHeader(20))
        ));
    }

    #[test]
    fn version_and_resolution_checks() {
        let mut b = header().to_bytes();
        b[4] = 2;
        assert!(matches!(
            read_header(&b),
            Err(StreamError::UnsupportedVersion(2))
        ));
        let h = StreamHeader::new(1000, 2000, 2);
        assert!(matches!(
            read_header(&h.to_bytes()),
            Err(StreamError::InvalidHeader(_))
        ));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let bytes = encode(&s);
        assert_eq!(bytes.len(), 33 + 16 * 4);
        let back = read_stream(&bytes[..]).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn empty_stream_is_header_only() {
        let s = PhotonStream::empty(header());
        let bytes = encode(&s);
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(read_header(&bytes).unwrap().n_records, 0);
    }

    #[test]
    fn truncated_record() {
        let bytes = encode(&sample());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            read_stream(cut),
            Err(StreamError::TruncatedRecord { index: 3 })
        ));
    }

    #[test]
    fn out_of_order_record() {
        let s = sample();
        let mut bytes = encode(&s);
        // swap records 2 and 3
        let (a, b) = (33 + 16 * 2, 33 + 16 * 3);
        let tmp: Vec<u8> = bytes[a..a + 16].to_vec();
        bytes.copy_within(b..b + 16, a);
        bytes[b..b + 16].copy_from_slice(&tmp);
        assert!(matches!(
            read_stream(&bytes[..]),
            Err(StreamError::OutOfOrder { index: 3 })
        ));
    }

    #[test]
    fn channel_and_micro_time_limits() {
        let bad = PhotonStream::new(header(), vec![PhotonRecord::new(0, 0, 2)]);
        assert!(matches!(bad, Err(StreamError::ChannelOutOfRange { .. })));
        let bad = PhotonStream::new(header(), vec![PhotonRecord::new(0, 12_500, 0)]);
        assert!(matches!(bad, Err(StreamError::MicroTimeOverflow { .. })));
        assert!(PhotonStream::new(header(), vec![PhotonRecord::new(0, 12_499, 0)]).is_ok());
    }

    #[test]
    fn balance_parabola() {
        assert_eq!(relative_efficiency(0.5), 1.0);
        assert_eq!(relative_efficiency(0.0), 0.0);
        assert!((relative_efficiency(0.4) - 0.96).abs() < 1e-15);
        let b = channel_balance(&sample()).unwrap();
        assert_eq!(b.fraction_per_channel, vec![0.5, 0.5]);
        assert_eq!(b.relative_efficiency, 1.0);
        assert!(!b.empty_channel);
    }

    #[test]
    fn balance_with_one_silent_channel() {
        let s = PhotonStream::new(header(), vec![PhotonRecord::new(0, 1, 0)]).unwrap();
        let b = channel_balance(&s).unwrap();
        assert_eq!(b.relative_efficiency, 0.0);
        assert!(b.empty_channel);
        assert!(matches!(
            channel_balance(&PhotonStream::empty(header())),
            Err(StreamError::EmptyStream)
        ));
    }
}
