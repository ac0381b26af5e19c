//! Fixtures shared by the pipeline benchmarks.

use lobpredict_core::book::SESSION_OPEN_NS;
use lobpredict_core::itch::{write_framed, MessageBody, Side, Symbol};
use lobpredict_core::ItchMessage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A framed ITCH stream of `n` messages for one symbol: adds within ten
/// ticks of a fixed mid and deletes of resting orders.
pub fn itch_stream(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbol = Symbol::new("BENCH").expect("valid symbol");
    let mut live: Vec<u64> = Vec::new();
    let mut next_ref = 1u64;
    let mid = 1_000_000u32;
    let mut out = Vec::with_capacity(n * 40);
    for i in 0..n {
        let ts = SESSION_OPEN_NS + i as u64 * 1_000_000;
        let body = if live.len() < 20 || rng.gen_bool(0.5) {
            let side = if rng.gen_bool(0.5) { Side::Bid } else { Side::Ask };
            let off = 100 * rng.gen_range(1..10u32);
            let price = match side {
                Side::Bid => mid - off,
                Side::Ask => mid + off,
            };
            live.push(next_ref);
            next_ref += 1;
            MessageBody::AddOrder {
                order_ref: next_ref - 1,
                side,
                shares: 100 * rng.gen_range(1..10),
                symbol,
                price,
            }
        } else {
            let order_ref = live.swap_remove(rng.gen_range(0..live.len()));
            MessageBody::OrderDelete { order_ref }
        };
        let msg = ItchMessage::new(1, 0, ts, body).expect("valid message");
        write_framed(&mut out, &msg);
    }
    out
}
