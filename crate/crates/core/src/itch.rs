//! Decoder and encoder for the subset of Nasdaq TotalView-ITCH 5.0 needed to
//! rebuild the displayed book.
//!
//! Supported message codes: `S`, `A`, `F`, `E`, `C`, `X`, `D`, `U`, `P`.
//! Every other code is skipped by [`MessageStream`] using the 2-byte length
//! prefix of the standard file framing, and counted in [`StreamStats`].
//!
//! All multi-byte integers are big-endian. Prices are integers in units of
//! 1/10000 USD and are never converted to floating point here.

use std::fmt;
use std::io::{self, Read};

use thiserror::Error;

/// Nanoseconds in one day. Timestamps must be strictly below this.
pub const NANOS_PER_DAY: u64 = 86_400 * 1_000_000_000;

/// Largest value representable in the 6-byte timestamp field.
const MAX_U48: u64 = (1 << 48) - 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ItchError {
    #[error("unsupported message type {0:?}")]
    UnknownType(char),
    #[error("message type {code:?} needs {expected} bytes, got {actual}")]
    TruncatedMessage {
        code: char,
        expected: usize,
        actual: usize,
    },
    #[error("invalid side byte {0:#04x}")]
    InvalidSide(u8),
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
    #[error("empty message body")]
    EmptyMessage,
    #[error("framing error at offset {offset}: {reason}")]
    FramingError { offset: u64, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<io::Error> for ItchError {
    fn from(e: io::Error) -> Self {
        ItchError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    fn from_byte(b: u8) -> Result<Self, ItchError> {
        match b {
            b'B' => Ok(Side::Bid),
            b'S' => Ok(Side::Ask),
            other => Err(ItchError::InvalidSide(other)),
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            Side::Bid => b'B',
            Side::Ask => b'S',
        }
    }
}

/// Eight-byte, space-padded ticker as carried on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Symbol([u8; 8]);

impl Symbol {
    /// Pads `s` with spaces; fails if it is longer than 8 bytes or not ASCII.
    pub fn new(s: &str) -> Result<Self, ItchError> {
        if s.len() > 8 || !s.is_ascii() {
            return Err(ItchError::InvalidField("symbol must be at most 8 ASCII bytes"));
        }
        let mut raw = [b' '; 8];
        raw[..s.len()].copy_from_slice(s.as_bytes());
        Ok(Symbol(raw))
    }

    pub fn from_raw(raw: [u8; 8]) -> Self {
        Symbol(raw)
    }

    pub fn raw(&self) -> &[u8; 8] {
        &self.0
    }

    /// Ticker with trailing padding removed.
    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).unwrap_or("").trim_end()
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Symbol({:?})", String::from_utf8_lossy(&self.0))
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kind-specific payload of a decoded message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageBody {
    SystemEvent {
        event_code: u8,
    },
    AddOrder {
        order_ref: u64,
        side: Side,
        shares: u32,
        symbol: Symbol,
        price: u32,
    },
    AddOrderMpid {
        order_ref: u64,
        side: Side,
        shares: u32,
        symbol: Symbol,
        price: u32,
        attribution: [u8; 4],
    },
    OrderExecuted {
        order_ref: u64,
        executed_shares: u32,
        match_number: u64,
    },
    OrderExecutedWithPrice {
        order_ref: u64,
        executed_shares: u32,
        match_number: u64,
        printable: u8,
        price: u32,
    },
    OrderCancel {
        order_ref: u64,
        cancelled_shares: u32,
    },
    OrderDelete {
        order_ref: u64,
    },
    OrderReplace {
        order_ref: u64,
        new_order_ref: u64,
        shares: u32,
        price: u32,
    },
    Trade {
        order_ref: u64,
        side: Side,
        shares: u32,
        symbol: Symbol,
        price: u32,
        match_number: u64,
    },
}

impl MessageBody {
    pub fn type_code(&self) -> u8 {
        match self {
            MessageBody::SystemEvent { .. } => b'S',
            MessageBody::AddOrder { .. } => b'A',
            MessageBody::AddOrderMpid { .. } => b'F',
            MessageBody::OrderExecuted { .. } => b'E',
            MessageBody::OrderExecutedWithPrice { .. } => b'C',
            MessageBody::OrderCancel { .. } => b'X',
            MessageBody::OrderDelete { .. } => b'D',
            MessageBody::OrderReplace { .. } => b'U',
            MessageBody::Trade { .. } => b'P',
        }
    }

    fn validate(&self) -> Result<(), ItchError> {
        match *self {
            MessageBody::AddOrder { shares, price, .. } | MessageBody::AddOrderMpid { shares, price, .. } => {
                nonzero(shares, "add order shares must be positive")?;
                nonzero(price, "add order price must be positive")
            }
            MessageBody::OrderExecuted { executed_shares, .. } => {
                nonzero(executed_shares, "executed shares must be positive")
            }
            MessageBody::OrderExecutedWithPrice {
                executed_shares,
                price,
                ..
            } => {
                nonzero(executed_shares, "executed shares must be positive")?;
                nonzero(price, "execution price must be positive")
            }
            MessageBody::OrderCancel { cancelled_shares, .. } => {
                nonzero(cancelled_shares, "cancelled shares must be positive")
            }
            MessageBody::OrderReplace { shares, price, .. } => {
                nonzero(shares, "replace shares must be positive")?;
                nonzero(price, "replace price must be positive")
            }
            MessageBody::Trade { price, .. } => nonzero(price, "trade price must be positive"),
            MessageBody::SystemEvent { .. } | MessageBody::OrderDelete { .. } => Ok(()),
        }
    }
}

fn nonzero(v: u32, what: &'static str) -> Result<(), ItchError> {
    if v == 0 {
        Err(ItchError::InvalidField(what))
    } else {
        Ok(())
    }
}

/// A validated ITCH message. Construction goes through [`ItchMessage::new`]
/// (or parsing), so every value satisfies the field invariants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItchMessage {
    stock_locate: u16,
    tracking: u16,
    timestamp_ns: u64,
    body: MessageBody,
}

impl ItchMessage {
    pub fn new(
        stock_locate: u16,
        tracking: u16,
        timestamp_ns: u64,
        body: MessageBody,
    ) -> Result<Self, ItchError> {
        if timestamp_ns >= NANOS_PER_DAY {
            return Err(ItchError::InvalidField("timestamp beyond end of day"));
        }
        body.validate()?;
        Ok(ItchMessage {
            stock_locate,
            tracking,
            timestamp_ns,
            body,
        })
    }

    pub fn stock_locate(&self) -> u16 {
        self.stock_locate
    }

    pub fn tracking(&self) -> u16 {
        self.tracking
    }

    pub fn timestamp_ns(&self) -> u64 {
        self.timestamp_ns
    }

    pub fn body(&self) -> &MessageBody {
        &self.body
    }

    pub fn type_code(&self) -> u8 {
        self.body.type_code()
    }
}

/// Fixed body length (including the type byte) for a supported code.
pub fn message_length(code: u8) -> Option<usize> {
    Some(match code {
        b'S' => 12,
        b'A' => 36,
        b'F' => 40,
        b'E' => 31,
        b'C' => 36,
        b'X' => 23,
        b'D' => 19,
        b'U' => 35,
        b'P' => 44,
        _ => return None,
    })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        out
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u16(&mut self) -> u16 {
        u16::from_be_bytes(self.take())
    }

    fn u32(&mut self) -> u32 {
        u32::from_be_bytes(self.take())
    }

    fn u48(&mut self) -> u64 {
        let b: [u8; 6] = self.take();
        let mut wide = [0u8; 8];
        wide[2..].copy_from_slice(&b);
        u64::from_be_bytes(wide)
    }

    fn u64(&mut self) -> u64 {
        u64::from_be_bytes(self.take())
    }
}

/// Decodes one message body (no length prefix). Bytes past the fixed length
/// for the code are ignored.
pub fn parse_message(bytes: &[u8]) -> Result<ItchMessage, ItchError> {
    let &code = bytes.first().ok_or(ItchError::EmptyMessage)?;
    let expected = message_length(code).ok_or(ItchError::UnknownType(code as char))?;
    if bytes.len() < expected {
        return Err(ItchError::TruncatedMessage {
            code: code as char,
            expected,
            actual: bytes.len(),
        });
    }
    let mut c = Cursor {
        buf: &bytes[..expected],
        pos: 1,
    };
    let stock_locate = c.u16();
    let tracking = c.u16();
    let timestamp_ns = c.u48();
    let body = match code {
        b'S' => MessageBody::SystemEvent { event_code: c.u8() },
        b'A' | b'F' => {
            let order_ref = c.u64();
            let side = Side::from_byte(c.u8())?;
            let shares = c.u32();
            let symbol = Symbol(c.take());
            let price = c.u32();
            if code == b'A' {
                MessageBody::AddOrder {
                    order_ref,
                    side,
                    shares,
                    symbol,
                    price,
                }
            } else {
                MessageBody::AddOrderMpid {
                    order_ref,
                    side,
                    shares,
                    symbol,
                    price,
                    attribution: c.take(),
                }
            }
        }
        b'E' => MessageBody::OrderExecuted {
            order_ref: c.u64(),
            executed_shares: c.u32(),
            match_number: c.u64(),
        },
        b'C' => MessageBody::OrderExecutedWithPrice {
            order_ref: c.u64(),
            executed_shares: c.u32(),
            match_number: c.u64(),
            printable: c.u8(),
            price: c.u32(),
        },
        b'X' => MessageBody::OrderCancel {
            order_ref: c.u64(),
            cancelled_shares: c.u32(),
        },
        b'D' => MessageBody::OrderDelete { order_ref: c.u64() },
        b'U' => MessageBody::OrderReplace {
            order_ref: c.u64(),
            new_order_ref: c.u64(),
            shares: c.u32(),
            price: c.u32(),
        },
        b'P' => MessageBody::Trade {
            order_ref: c.u64(),
            side: Side::from_byte(c.u8())?,
            shares: c.u32(),
            symbol: Symbol(c.take()),
            price: c.u32(),
            match_number: c.u64(),
        },
        _ => unreachable!("length table and decoder disagree"),
    };
    debug_assert_eq!(c.pos, expected);
    ItchMessage::new(stock_locate, tracking, timestamp_ns, body)
}

/// Encodes a message body without the length prefix.
pub fn encode_message(msg: &ItchMessage) -> Vec<u8> {
    let code = msg.type_code();
    let len = message_length(code).expect("every body variant has a length");
    let mut out = Vec::with_capacity(len);
    out.push(code);
    out.extend_from_slice(&msg.stock_locate.to_be_bytes());
    out.extend_from_slice(&msg.tracking.to_be_bytes());
    debug_assert!(msg.timestamp_ns <= MAX_U48);
    out.extend_from_slice(&msg.timestamp_ns.to_be_bytes()[2..]);
    match msg.body {
        MessageBody::SystemEvent { event_code } => out.push(event_code),
        MessageBody::AddOrder {
            order_ref,
            side,
            shares,
            symbol,
            price,
        } => {
            out.extend_from_slice(&order_ref.to_be_bytes());
            out.push(side.to_byte());
            out.extend_from_slice(&shares.to_be_bytes());
            out.extend_from_slice(&symbol.0);
            out.extend_from_slice(&price.to_be_bytes());
        }
        MessageBody::AddOrderMpid {
            order_ref,
            side,
            shares,
            symbol,
            price,
            attribution,
        } => {
            out.extend_from_slice(&order_ref.to_be_bytes());
            out.push(side.to_byte());
            out.extend_from_slice(&shares.to_be_bytes());
            out.extend_from_slice(&symbol.0);
            out.extend_from_slice(&price.to_be_bytes());
            out.extend_from_slice(&attribution);
        }
        MessageBody::OrderExecuted {
            order_ref,
            executed_shares,
            match_number,
        } => {
            out.extend_from_slice(&order_ref.to_be_bytes());
            out.extend_from_slice(&executed_shares.to_be_bytes());
            out.extend_from_slice(&match_number.to_be_bytes());
        }
        MessageBody::OrderExecutedWithPrice {
            order_ref,
            executed_shares,
            match_number,
            printable,
            price,
        } => {
            out.extend_from_slice(&order_ref.to_be_bytes());
            out.extend_from_slice(&executed_shares.to_be_bytes());
            out.extend_from_slice(&match_number.to_be_bytes());
            out.push(printable);
            out.extend_from_slice(&price.to_be_bytes());
        }
        MessageBody::OrderCancel {
            order_ref,
            cancelled_shares,
        } => {
            out.extend_from_slice(&order_ref.to_be_bytes());
            out.extend_from_slice(&cancelled_shares.to_be_bytes());
        }
        MessageBody::OrderDelete { order_ref } => {
            out.extend_from_slice(&order_ref.to_be_bytes());
        }
        MessageBody::OrderReplace {
            order_ref,
            new_order_ref,
            shares,
            price,
        } => {
            out.extend_from_slice(&order_ref.to_be_bytes());
            out.extend_from_slice(&new_order_ref.to_be_bytes());
            out.extend_from_slice(&shares.to_be_bytes());
            out.extend_from_slice(&price.to_be_bytes());
        }
        MessageBody::Trade {
            order_ref,
            side,
            shares,
            symbol,
            price,
            match_number,
        } => {
            out.extend_from_slice(&order_ref.to_be_bytes());
            out.push(side.to_byte());
            out.extend_from_slice(&shares.to_be_bytes());
            out.extend_from_slice(&symbol.0);
            out.extend_from_slice(&price.to_be_bytes());
            out.extend_from_slice(&match_number.to_be_bytes());
        }
    }
    debug_assert_eq!(out.len(), len);
    out
}

/// Appends `msg` with its 2-byte big-endian length prefix.
pub fn write_framed(out: &mut Vec<u8>, msg: &ItchMessage) {
    let body = encode_message(msg);
    out.extend_from_slice(&(body.len() as u16).to_be_bytes());
    out.extend_from_slice(&body);
}

/// Counters surfaced by a [`MessageStream`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct StreamStats {
    pub messages: u64,
    pub skipped: u64,
    pub bytes: u64,
}

/// Iterator over length-prefixed ITCH messages. After an error the stream
/// is fused and yields nothing further.
pub struct MessageStream<R> {
    reader: R,
    stats: StreamStats,
    buf: Vec<u8>,
    done: bool,
}

impl<R: Read> MessageStream<R> {
    pub fn new(reader: R) -> Self {
        MessageStream {
            reader,
            stats: StreamStats::default(),
            buf: Vec::with_capacity(64),
            done: false,
        }
    }

    pub fn stats(&self) -> StreamStats {
        self.stats
    }

    /// Byte offset just past the last fully consumed frame.
    pub fn position(&self) -> u64 {
        self.stats.bytes
    }

    fn framing(&self, reason: impl Into<String>) -> ItchError {
        ItchError::FramingError {
            offset: self.stats.bytes,
            reason: reason.into(),
        }
    }

    fn next_frame(&mut self) -> Result<Option<ItchMessage>, ItchError> {
        loop {
            let mut prefix = [0u8; 2];
            let got = read_full(&mut self.reader, &mut prefix)?;
            if got == 0 {
                return Ok(None);
            }
            if got < 2 {
                return Err(self.framing("stream ends inside a length prefix"));
            }
            let len = u16::from_be_bytes(prefix) as usize;
            if len == 0 {
                return Err(self.framing("zero-length frame"));
            }
            self.buf.resize(len, 0);
            let got = read_full(&mut self.reader, &mut self.buf)?;
            if got < len {
                return Err(self.framing(format!(
                    "length prefix {len} overruns stream end ({got} bytes left)"
                )));
            }
            let frame_start = self.stats.bytes;
            self.stats.bytes += 2 + len as u64;
            if message_length(self.buf[0]).is_none() {
                self.stats.skipped += 1;
                continue;
            }
            let msg = parse_message(&self.buf).map_err(|e| match e {
                ItchError::TruncatedMessage { .. } => ItchError::FramingError {
                    offset: frame_start,
                    reason: e.to_string(),
                },
                other => other,
            })?;
            self.stats.messages += 1;
            return Ok(Some(msg));
        }
    }
}

impl<R: Read> Iterator for MessageStream<R> {
    type Item = Result<ItchMessage, ItchError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_frame() {
            Ok(Some(m)) => Some(Ok(m)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Convenience wrapper over [`MessageStream`].
pub fn stream_messages<R: Read>(reader: R) -> MessageStream<R> {
    MessageStream::new(reader)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
