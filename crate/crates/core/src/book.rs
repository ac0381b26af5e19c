//! Full-depth order book maintained from ITCH events, with top-of-book
//! snapshots and the snapshot CSV interchange format.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use thiserror::Error;

use crate::itch::{ItchMessage, MessageBody, Side};

/// Number of levels per side carried in a snapshot.
pub const BOOK_DEPTH: usize = 10;

/// 09:30:00 in nanoseconds since midnight.
pub const SESSION_OPEN_NS: u64 = (9 * 3600 + 30 * 60) * 1_000_000_000;
/// 16:00:00 in nanoseconds since midnight.
pub const SESSION_CLOSE_NS: u64 = 16 * 3600 * 1_000_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BookError {
    #[error("unknown order reference {0}")]
    UnknownOrderRef(u64),
    #[error("duplicate order reference {0}")]
    DuplicateOrderRef(u64),
    #[error("order {order_ref}: {requested} shares requested, {remaining} remaining")]
    OverExecution {
        order_ref: u64,
        requested: u32,
        remaining: u32,
    },
    #[error("order {order_ref} would cross the book (bid {best_bid}, ask {best_ask})")]
    CrossedBook {
        order_ref: u64,
        best_bid: u32,
        best_ask: u32,
    },
    #[error("message {index}: {source}")]
    Replay {
        index: usize,
        #[source]
        source: Box<BookError>,
    },
    #[error("snapshot csv: {0}")]
    Csv(String),
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestingOrder {
    pub side: Side,
    pub price: u32,
    pub remaining: u32,
}

/// One price level: price in 1/10000 USD, volume in shares. `(0, 0)` is the
/// padding sentinel for levels beyond the book's depth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Level {
    pub price: u32,
    pub volume: u32,
}

impl Level {
    pub const EMPTY: Level = Level { price: 0, volume: 0 };

    pub fn new(price: u32, volume: u32) -> Self {
        Level { price, volume }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BookSnapshot {
    pub timestamp_ns: u64,
    pub asks: [Level; BOOK_DEPTH],
    pub bids: [Level; BOOK_DEPTH],
    pub valid_asks: usize,
    pub valid_bids: usize,
}

impl BookSnapshot {
    pub fn empty(timestamp_ns: u64) -> Self {
        BookSnapshot {
            timestamp_ns,
            asks: [Level::EMPTY; BOOK_DEPTH],
            bids: [Level::EMPTY; BOOK_DEPTH],
            valid_asks: 0,
            valid_bids: 0,
        }
    }

    /// Builds a snapshot from ladders given best-first; missing levels are
    /// padded with the sentinel.
    pub fn from_levels(timestamp_ns: u64, asks: &[Level], bids: &[Level]) -> Self {
        let mut snap = BookSnapshot::empty(timestamp_ns);
        snap.valid_asks = asks.len().min(BOOK_DEPTH);
        snap.valid_bids = bids.len().min(BOOK_DEPTH);
        snap.asks[..snap.valid_asks].copy_from_slice(&asks[..snap.valid_asks]);
        snap.bids[..snap.valid_bids].copy_from_slice(&bids[..snap.valid_bids]);
        snap
    }

    pub fn best_ask(&self) -> Option<Level> {
        (self.valid_asks > 0).then(|| self.asks[0])
    }

    pub fn best_bid(&self) -> Option<Level> {
        (self.valid_bids > 0).then(|| self.bids[0])
    }

    /// Checks ordering, positivity, padding and spread.
    pub fn validate(&self) -> Result<(), BookError> {
        let bad = |m: String| Err(BookError::InvalidSnapshot(m));
        if self.valid_asks > BOOK_DEPTH || self.valid_bids > BOOK_DEPTH {
            return bad("valid level count exceeds depth".into());
        }
        for (name, side, valid, ascending) in [
            ("ask", &self.asks, self.valid_asks, true),
            ("bid", &self.bids, self.valid_bids, false),
        ] {
            for (i, lvl) in side.iter().enumerate() {
                if i < valid {
                    if lvl.price == 0 || lvl.volume == 0 {
                        return bad(format!("{name} level {} is empty", i + 1));
                    }
                    if i > 0 {
                        let prev = side[i - 1].price;
                        let ordered = if ascending {
                            lvl.price > prev
                        } else {
                            lvl.price < prev
                        };
                        if !ordered {
                            return bad(format!("{name} level {} out of order", i + 1));
                        }
                    }
                } else if *lvl != Level::EMPTY {
                    return bad(format!("{name} level {} beyond depth is not padding", i + 1));
                }
            }
        }
        if let (Some(b), Some(a)) = (self.best_bid(), self.best_ask()) {
            if b.price >= a.price {
                return bad(format!("crossed: bid {} >= ask {}", b.price, a.price));
            }
        }
        Ok(())
    }
}

/// Outcome of applying one message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BookChange {
    /// Some level among the top [`BOOK_DEPTH`] of either side changed.
    pub top_changed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct OrderBook {
    orders: HashMap<u64, RestingOrder>,
    bids: BTreeMap<u32, u64>,
    asks: BTreeMap<u32, u64>,
}

impl OrderBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn order(&self, order_ref: u64) -> Option<&RestingOrder> {
        self.orders.get(&order_ref)
    }

    pub fn orders(&self) -> impl Iterator<Item = (&u64, &RestingOrder)> {
        self.orders.iter()
    }

    pub fn order_count(&self) -> usize {
        self.orders.len()
    }

    pub fn best_bid(&self) -> Option<(u32, u64)> {
        self.bids.iter().next_back().map(|(&p, &v)| (p, v))
    }

    pub fn best_ask(&self) -> Option<(u32, u64)> {
        self.asks.iter().next().map(|(&p, &v)| (p, v))
    }

    /// Bid ladder best-first.
    pub fn bid_levels(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.bids.iter().rev().map(|(&p, &v)| (p, v))
    }

    /// Ask ladder best-first.
    pub fn ask_levels(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.asks.iter().map(|(&p, &v)| (p, v))
    }

    pub fn total_shares(&self) -> u64 {
        self.bids.values().chain(self.asks.values()).sum()
    }

    /// Whether a level at `price` on `side` ranks among the best `BOOK_DEPTH`.
    fn in_top(&self, side: Side, price: u32) -> bool {
        let better = match side {
            Side::Bid => self
                .bids
                .range(price.saturating_add(1)..)
                .take(BOOK_DEPTH)
                .count(),
            Side::Ask => self.asks.range(..price).take(BOOK_DEPTH).count(),
        };
        better < BOOK_DEPTH
    }

    fn ladder(&mut self, side: Side) -> &mut BTreeMap<u32, u64> {
        match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        }
    }

    fn check_cross(&self, order_ref: u64, side: Side, price: u32) -> Result<(), BookError> {
        let crossed = match side {
            Side::Bid => self.best_ask().map(|(a, _)| (price, a)),
            Side::Ask => self.best_bid().map(|(b, _)| (b, price)),
        };
        match crossed {
            Some((best_bid, best_ask)) if best_bid >= best_ask => Err(BookError::CrossedBook {
                order_ref,
                best_bid,
                best_ask,
            }),
            _ => Ok(()),
        }
    }

    fn add(&mut self, order_ref: u64, side: Side, price: u32, shares: u32) -> bool {
        *self.ladder(side).entry(price).or_insert(0) += shares as u64;
        self.orders.insert(
            order_ref,
            RestingOrder {
                side,
                price,
                remaining: shares,
            },
        );
        self.in_top(side, price)
    }

    /// Removes `shares` from a resting order; the caller has validated the
    /// amount. Returns whether the touched level was in the top region before
    /// the change.
    fn reduce(&mut self, order_ref: u64, shares: u32) -> bool {
        let order = self.orders.get_mut(&order_ref).expect("validated order ref");
        let (side, price) = (order.side, order.price);
        order.remaining -= shares;
        if order.remaining == 0 {
            self.orders.remove(&order_ref);
        }
        let top = self.in_top(side, price);
        match self.ladder(side).entry(price) {
            Entry::Occupied(mut e) => {
                *e.get_mut() -= shares as u64;
                if *e.get() == 0 {
                    e.remove();
                }
            }
            Entry::Vacant(_) => unreachable!("resting order without a ladder level"),
        }
        top
    }

    fn resting(&self, order_ref: u64) -> Result<RestingOrder, BookError> {
        self.orders
            .get(&order_ref)
            .copied()
            .ok_or(BookError::UnknownOrderRef(order_ref))
    }

    fn decrement(&mut self, order_ref: u64, shares: u32) -> Result<bool, BookError> {
        let order = self.resting(order_ref)?;
        if shares > order.remaining {
            return Err(BookError::OverExecution {
                order_ref,
                requested: shares,
                remaining: order.remaining,
            });
        }
        Ok(self.reduce(order_ref, shares))
    }

    /// Applies one message. On error the book is left unchanged.
    pub fn apply(&mut self, msg: &ItchMessage) -> Result<BookChange, BookError> {
        let top_changed = match *msg.body() {
            MessageBody::AddOrder {
                order_ref,
                side,
                shares,
                price,
                ..
            }
            | MessageBody::AddOrderMpid {
                order_ref,
                side,
                shares,
                price,
                ..
            } => {
                if self.orders.contains_key(&order_ref) {
                    return Err(BookError::DuplicateOrderRef(order_ref));
                }
                self.check_cross(order_ref, side, price)?;
                self.add(order_ref, side, price, shares)
            }
            MessageBody::OrderExecuted {
                order_ref,
                executed_shares,
                ..
            }
            | MessageBody::OrderExecutedWithPrice {
                order_ref,
                executed_shares,
                ..
            } => self.decrement(order_ref, executed_shares)?,
            MessageBody::OrderCancel {
                order_ref,
                cancelled_shares,
            } => self.decrement(order_ref, cancelled_shares)?,
            MessageBody::OrderDelete { order_ref } => {
                let order = self.resting(order_ref)?;
                self.reduce(order_ref, order.remaining)
            }
            MessageBody::OrderReplace {
                order_ref,
                new_order_ref,
                shares,
                price,
            } => {
                let old = self.resting(order_ref)?;
                if new_order_ref != order_ref && self.orders.contains_key(&new_order_ref) {
                    return Err(BookError::DuplicateOrderRef(new_order_ref));
                }
                self.check_cross(new_order_ref, old.side, price)?;
                let removed = self.reduce(order_ref, old.remaining);
                let added = self.add(new_order_ref, old.side, price, shares);
                removed || added
            }
            MessageBody::SystemEvent { .. } | MessageBody::Trade { .. } => false,
        };
        Ok(BookChange { top_changed })
    }

    /// Best `k` levels per side (capped at [`BOOK_DEPTH`]), sentinel-padded.
    pub fn snapshot_top(&self, timestamp_ns: u64, k: usize) -> BookSnapshot {
        let k = k.min(BOOK_DEPTH);
        let clamp = |(p, v): (u32, u64)| Level::new(p, v.min(u32::MAX as u64) as u32);
        let asks: Vec<Level> = self.ask_levels().take(k).map(clamp).collect();
        let bids: Vec<Level> = self.bid_levels().take(k).map(clamp).collect();
        BookSnapshot::from_levels(timestamp_ns, &asks, &bids)
    }
}

pub fn in_session(timestamp_ns: u64) -> bool {
    (SESSION_OPEN_NS..SESSION_CLOSE_NS).contains(&timestamp_ns)
}

/// Result of replaying a day of messages for one symbol.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub snapshots: Vec<BookSnapshot>,
    pub book: OrderBook,
    /// Messages applied to the symbol's book.
    pub applied: u64,
    /// Messages belonging to other instruments.
    pub ignored: u64,
}

/// Replays `messages` for `symbol`, emitting a snapshot after every event that
/// changes the top of book during regular trading hours.
///
/// The instrument's stock-locate code is learned from the first add or trade
/// naming `symbol`; messages with any other locate are ignored.
pub fn reconstruct<'a, I>(messages: I, symbol: &str) -> Result<Reconstruction, BookError>
where
    I: IntoIterator<Item = &'a ItchMessage>,
{
    let mut book = OrderBook::new();
    let mut snapshots = Vec::new();
    let mut locate: Option<u16> = None;
    let (mut applied, mut ignored) = (0u64, 0u64);
    for (index, msg) in messages.into_iter().enumerate() {
        if locate.is_none() {
            let names = match msg.body() {
                MessageBody::AddOrder { symbol: s, .. }
                | MessageBody::AddOrderMpid { symbol: s, .. }
                | MessageBody::Trade { symbol: s, .. } => Some(s.as_str() == symbol),
                _ => None,
            };
            if names == Some(true) {
                locate = Some(msg.stock_locate());
            }
        }
        if locate != Some(msg.stock_locate()) {
            ignored += 1;
            continue;
        }
        let change = book.apply(msg).map_err(|e| BookError::Replay {
            index,
            source: Box::new(e),
        })?;
        applied += 1;
        if change.top_changed && in_session(msg.timestamp_ns()) {
            snapshots.push(book.snapshot_top(msg.timestamp_ns(), BOOK_DEPTH));
        }
    }
    Ok(Reconstruction {
        snapshots,
        book,
        applied,
        ignored,
    })
}

/// Column names of the snapshot CSV, in order.
pub fn csv_header() -> Vec<String> {
    let mut cols = vec!["ts_ns".to_string()];
    for i in 1..=BOOK_DEPTH {
        cols.push(format!("ask_px_{i}"));
        cols.push(format!("ask_sz_{i}"));
        cols.push(format!("bid_px_{i}"));
        cols.push(format!("bid_sz_{i}"));
    }
    cols
}

pub fn write_snapshots_csv<W: Write>(out: W, snaps: &[BookSnapshot]) -> Result<(), BookError> {
    let csv_err = |e: csv::Error| BookError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header()).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(1 + 4 * BOOK_DEPTH);
    for s in snaps {
        row.clear();
        row.push(s.timestamp_ns.to_string());
        for i in 0..BOOK_DEPTH {
            row.push(s.asks[i].price.to_string());
            row.push(s.asks[i].volume.to_string());
            row.push(s.bids[i].price.to_string());
            row.push(s.bids[i].volume.to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| BookError::Csv(e.to_string()))
}

/// Reads and validates a snapshot CSV. Valid level counts are the number of
/// leading non-sentinel levels on each side.
pub fn read_snapshots_csv<R: Read>(input: R) -> Result<Vec<BookSnapshot>, BookError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| BookError::Csv(e.to_string()))?;
    if header.iter().ne(csv_header().iter().map(String::as_str)) {
        return Err(BookError::Csv("unexpected header".into()));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| BookError::Csv(e.to_string()))?;
        let field = |i: usize| -> Result<u64, BookError> {
            rec.get(i)
                .ok_or_else(|| BookError::Csv(format!("row {}: missing column {i}", line + 1)))?
                .trim()
                .parse::<u64>()
                .map_err(|e| BookError::Csv(format!("row {}: column {i}: {e}", line + 1)))
        };
        let narrow = |v: u64| -> Result<u32, BookError> {
            u32::try_from(v).map_err(|_| BookError::Csv(format!("row {}: value overflow", line + 1)))
        };
        let mut snap = BookSnapshot::empty(field(0)?);
        for i in 0..BOOK_DEPTH {
            let base = 1 + 4 * i;
            snap.asks[i] = Level::new(narrow(field(base)?)?, narrow(field(base + 1)?)?);
            snap.bids[i] = Level::new(narrow(field(base + 2)?)?, narrow(field(base + 3)?)?);
        }
        snap.valid_asks = snap.asks.iter().take_while(|l| **l != Level::EMPTY).count();
        snap.valid_bids = snap.bids.iter().take_while(|l| **l != Level::EMPTY).count();
        snap.validate()
            .map_err(|e| BookError::Csv(format!("row {}: {e}", line + 1)))?;
        out.push(snap);
    }
    Ok(out)
}
