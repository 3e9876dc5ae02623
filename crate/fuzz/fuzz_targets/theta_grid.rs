#![no_main]

use libfuzzer_sys::fuzz_target;
use ssdr::io::parse_theta_grid;

fuzz_target!(|s: &str| {
    if let Ok(grid) = parse_theta_grid(s) {
        assert!(!grid.is_empty());
        assert!(grid.iter().all(|t| t.is_finite() && *t >= 0.0));
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }
});
