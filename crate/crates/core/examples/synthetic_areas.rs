//! Writes a synthetic small-area CSV: `synthetic_areas <n> <seed> [countries...]`.

use std::io;

use sdcrisk_core::utility::{synthetic_areas, write_areas};

fn main() -> sdcrisk_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n = args.first().and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let countries: Vec<&str> = args.iter().skip(2).map(String::as_str).collect();
    write_areas(&synthetic_areas(n, seed, &countries), io::stdout().lock())
}
