//! Random ITCH traffic and an independent book model for oracle checks.

use std::collections::BTreeMap;

use lobpredict_core::book::{OrderBook, BOOK_DEPTH, SESSION_OPEN_NS};
use lobpredict_core::itch::{encode_message, parse_message, stream_messages, write_framed, Side, Symbol};
use lobpredict_core::{ItchMessage, Level, MessageBody};
use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn side(rng: &mut ChaCha8Rng) -> Side {
    if rng.gen_bool(0.5) {
        Side::Bid
    } else {
        Side::Ask
    }
}

fn symbol(rng: &mut ChaCha8Rng) -> Symbol {
    let n = rng.gen_range(1..=8);
    let s: String = (0..n).map(|_| rng.gen_range(b'A'..=b'Z') as char).collect();
    Symbol::new(&s).unwrap()
}

fn pos(rng: &mut ChaCha8Rng) -> u32 {
    rng.gen_range(1..=u32::MAX)
}

/// A message of any supported type with every field drawn at random.
pub fn random_message(rng: &mut ChaCha8Rng) -> ItchMessage {
    let body = match rng.gen_range(0..9) {
        0 => MessageBody::SystemEvent {
            event_code: rng.gen(),
        },
        1 => MessageBody::AddOrder {
            order_ref: rng.gen(),
            side: side(rng),
            shares: pos(rng),
            symbol: symbol(rng),
            price: pos(rng),
        },
        2 => MessageBody::AddOrderMpid {
            order_ref: rng.gen(),
            side: side(rng),
            shares: pos(rng),
            symbol: symbol(rng),
            price: pos(rng),
            attribution: rng.gen(),
        },
        3 => MessageBody::OrderExecuted {
            order_ref: rng.gen(),
            executed_shares: pos(rng),
            match_number: rng.gen(),
        },
        4 => MessageBody::OrderExecutedWithPrice {
            order_ref: rng.gen(),
            executed_shares: pos(rng),
            match_number: rng.gen(),
            printable: rng.gen(),
            price: pos(rng),
        },
        5 => MessageBody::OrderCancel {
            order_ref: rng.gen(),
            cancelled_shares: pos(rng),
        },
        6 => MessageBody::OrderDelete { order_ref: rng.gen() },
        7 => MessageBody::OrderReplace {
            order_ref: rng.gen(),
            new_order_ref: rng.gen(),
            shares: pos(rng),
            price: pos(rng),
        },
        _ => MessageBody::Trade {
            order_ref: rng.gen(),
            side: side(rng),
            shares: rng.gen(),
            symbol: symbol(rng),
            price: pos(rng),
            match_number: rng.gen(),
        },
    };
    // Timestamps are 48-bit nanoseconds since midnight.
    let ts = rng.gen_range(0..86_400_000_000_000u64);
    ItchMessage::new(rng.gen(), rng.gen(), ts, body).unwrap()
}

/// Messages that fail to survive encode → decode, both one at a time and as
/// a single length-prefixed stream.
pub fn round_trip_failures(seed: u64, n: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let msgs: Vec<ItchMessage> = (0..n).map(|_| random_message(&mut rng)).collect();
    let mut failures = msgs
        .iter()
        .filter(|m| parse_message(&encode_message(m)).as_ref() != Ok(*m))
        .count();
    let mut framed = Vec::new();
    for m in &msgs {
        write_framed(&mut framed, m);
    }
    let decoded: Vec<ItchMessage> = stream_messages(framed.as_slice()).map(|r| r.unwrap()).collect();
    if decoded != msgs {
        failures += msgs.len().max(1);
    }
    failures
}

/// Plain map of live orders; the ladders are re-aggregated from scratch on
/// every query.
#[derive(Debug, Clone)]
pub struct ShadowBook {
    pub orders: BTreeMap<u64, (Side, u32, u32)>,
    next_ref: u64,
    /// Reference price new orders are placed around; drifts by a tick.
    mid: u32,
    /// Live orders beyond which every event is a delete.
    cap: usize,
    /// New orders rest up to this many ticks behind the reference price.
    spread_ticks: u32,
}

impl ShadowBook {
    pub fn new(cap: usize, spread_ticks: u32) -> Self {
        ShadowBook {
            orders: BTreeMap::new(),
            next_ref: 0,
            mid: 1_000_000,
            cap,
            spread_ticks,
        }
    }

    /// Best-first `(price, volume)` of one side, summed over live orders.
    pub fn levels(&self, s: Side) -> Vec<(u32, u64)> {
        let mut agg: BTreeMap<u32, u64> = BTreeMap::new();
        for (side, price, shares) in self.orders.values() {
            if *side == s {
                *agg.entry(*price).or_default() += *shares as u64;
            }
        }
        let v: Vec<(u32, u64)> = agg.into_iter().collect();
        match s {
            Side::Bid => v.into_iter().rev().collect(),
            Side::Ask => v,
        }
    }

    fn best(&self, s: Side) -> Option<u32> {
        self.levels(s).first().map(|l| l.0)
    }

    fn at_best(&self, rng: &mut ChaCha8Rng, s: Side) -> Option<u64> {
        let best = self.best(s)?;
        self.orders
            .iter()
            .filter(|(_, o)| o.0 == s && o.1 == best)
            .map(|(r, _)| *r)
            .choose(rng)
    }

    /// A price on `s` that does not cross the opposite side, near `mid`.
    fn price(&self, rng: &mut ChaCha8Rng, s: Side, mid: u32, tick: u32) -> u32 {
        let offset = rng.gen_range(0..self.spread_ticks) * tick;
        match s {
            Side::Bid => {
                let cap = self.best(Side::Ask).map_or(mid, |a| a - tick);
                (mid - tick - offset).min(cap)
            }
            Side::Ask => {
                let floor = self.best(Side::Bid).map_or(mid, |b| b + tick);
                (mid + tick + offset).max(floor)
            }
        }
    }

    /// A valid event (never crossing, never referencing a dead order) and
    /// its effect on the shadow state.
    pub fn random_event(&mut self, rng: &mut ChaCha8Rng, symbol: Symbol) -> MessageBody {
        const TICK: u32 = 100;
        if rng.gen_bool(0.3) {
            self.mid = if rng.gen_bool(0.5) {
                self.mid + TICK
            } else {
                self.mid - TICK
            };
        }
        let mid = self.mid;
        let live = self.orders.keys().copied().choose(rng);
        let mut kind = if live.is_none() { 0 } else { rng.gen_range(0..10) };
        if self.orders.len() > self.cap {
            kind = 6;
        }
        // Executions take liquidity at the touch.
        let live = if matches!(kind, 3 | 4) {
            let s = side(rng);
            self.at_best(rng, s).or(live)
        } else {
            live
        };
        match (kind, live) {
            (0..=2, _) | (_, None) => {
                let s = side(rng);
                let price = self.price(rng, s, mid, TICK);
                let shares = rng.gen_range(1..500);
                self.next_ref += 1;
                self.orders.insert(self.next_ref, (s, price, shares));
                if rng.gen_bool(0.5) {
                    MessageBody::AddOrder {
                        order_ref: self.next_ref,
                        side: s,
                        shares,
                        symbol,
                        price,
                    }
                } else {
                    MessageBody::AddOrderMpid {
                        order_ref: self.next_ref,
                        side: s,
                        shares,
                        symbol,
                        price,
                        attribution: *b"MPID",
                    }
                }
            }
            (3 | 4, Some(r)) => {
                let o = self.orders.get_mut(&r).unwrap();
                let n = rng.gen_range(1..=o.2);
                o.2 -= n;
                let price = o.1;
                if o.2 == 0 {
                    self.orders.remove(&r);
                }
                if kind == 3 {
                    MessageBody::OrderExecuted {
                        order_ref: r,
                        executed_shares: n,
                        match_number: rng.gen(),
                    }
                } else {
                    MessageBody::OrderExecutedWithPrice {
                        order_ref: r,
                        executed_shares: n,
                        match_number: rng.gen(),
                        printable: b'Y',
                        price,
                    }
                }
            }
            (5, Some(r)) => {
                let o = self.orders.get_mut(&r).unwrap();
                let n = rng.gen_range(1..=o.2);
                o.2 -= n;
                if o.2 == 0 {
                    self.orders.remove(&r);
                }
                MessageBody::OrderCancel {
                    order_ref: r,
                    cancelled_shares: n,
                }
            }
            (6 | 7, Some(r)) => {
                self.orders.remove(&r);
                MessageBody::OrderDelete { order_ref: r }
            }
            (8, Some(r)) => {
                let (s, _, _) = self.orders.remove(&r).unwrap();
                let price = self.price(rng, s, mid, TICK);
                let shares = rng.gen_range(1..500);
                self.next_ref += 1;
                self.orders.insert(self.next_ref, (s, price, shares));
                MessageBody::OrderReplace {
                    order_ref: r,
                    new_order_ref: self.next_ref,
                    shares,
                    price,
                }
            }
            _ => MessageBody::Trade {
                order_ref: 0,
                side: side(rng),
                shares: rng.gen_range(1..100),
                symbol,
                price: mid,
                match_number: rng.gen(),
            },
        }
    }
}

/// Best-first top levels of the shadow book, as book levels.
fn shadow_top(shadow: &ShadowBook, s: Side) -> Vec<Level> {
    shadow
        .levels(s)
        .into_iter()
        .take(BOOK_DEPTH)
        .map(|(p, v)| Level::new(p, v as u32))
        .collect()
}

/// Applies `n` random events and compares the incremental book with the
/// from-scratch aggregation after every one. Returns the first mismatch.
pub fn book_oracle_run(seed: u64, n: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sym = Symbol::new("TEST").unwrap();
    // Deep enough that the ladders often exceed the snapshot depth.
    let mut shadow = ShadowBook::new(300, 20);
    let mut book = OrderBook::new();
    let mut deepest = 0;
    for i in 0..n {
        let body = shadow.random_event(&mut rng, sym);
        let msg = ItchMessage::new(1, 0, SESSION_OPEN_NS + i as u64, body).unwrap();
        book.apply(&msg).map_err(|e| format!("event {i}: {e}"))?;
        for s in [Side::Bid, Side::Ask] {
            let got: Vec<(u32, u64)> = match s {
                Side::Bid => book.bid_levels().collect(),
                Side::Ask => book.ask_levels().collect(),
            };
            if got != shadow.levels(s) {
                return Err(format!("event {i}: {s:?} ladder differs"));
            }
        }
        if book.order_count() != shadow.orders.len() {
            return Err(format!("event {i}: order count differs"));
        }
        let snap = book.snapshot_top(msg.timestamp_ns(), BOOK_DEPTH);
        let asks = shadow_top(&shadow, Side::Ask);
        let bids = shadow_top(&shadow, Side::Bid);
        deepest = deepest.max(shadow.levels(Side::Bid).len());
        if snap.asks[..snap.valid_asks] != asks[..] || snap.bids[..snap.valid_bids] != bids[..] {
            return Err(format!("event {i}: top-of-book snapshot differs"));
        }
    }
    if deepest <= BOOK_DEPTH {
        return Err(format!("book never deeper than {deepest} levels"));
    }
    Ok(())
}

/// A length-prefixed ITCH day for one symbol: `n` in-session events plus a
/// sprinkling of another instrument's adds on a different locate.
pub fn itch_day(seed: u64, n: usize, symbol: &str) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sym = Symbol::new(symbol).unwrap();
    let other = Symbol::new("OTHER").unwrap();
    // A thin book, so the touch (and the mid) moves often.
    let mut shadow = ShadowBook::new(20, 4);
    let mut out = Vec::new();
    let step = 1_000_000_000;
    for i in 0..n as u64 {
        let body = shadow.random_event(&mut rng, sym);
        let msg = ItchMessage::new(7, 0, SESSION_OPEN_NS + i * step, body).unwrap();
        write_framed(&mut out, &msg);
        if i % 10 == 0 {
            let noise = MessageBody::AddOrder {
                order_ref: 1 << 40 | i,
                side: Side::Bid,
                shares: 5,
                symbol: other,
                price: 500,
            };
            write_framed(
                &mut out,
                &ItchMessage::new(9, 0, SESSION_OPEN_NS + i * step, noise).unwrap(),
            );
        }
    }
    out
}
