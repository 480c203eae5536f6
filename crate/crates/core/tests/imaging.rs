mod oracles;

use mammocolor::imaging::{otsu_threshold, BitDepth, RawImage};
use proptest::prelude::*;

proptest! {
    #[test]
    fn otsu_equals_exhaustive_scan(
        (w, h, pixels) in (1usize..24, 1usize..24).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0u16..256, w * h)))
    ) {
        prop_assume!(pixels.iter().any(|&p| p != pixels[0]));
        let image = RawImage::new(w, h, BitDepth::Eight, pixels.clone()).unwrap();
        prop_assert_eq!(otsu_threshold(&image).unwrap(), oracles::otsu8(&pixels));
    }

    #[test]
    fn otsu_on_two_clusters_separates_them(lo in 0u16..100, gap in 20u16..100, n in 2usize..50) {
        let pixels: Vec<u16> = (0..2 * n).map(|i| if i % 2 == 0 { lo } else { lo + gap }).collect();
        let image = RawImage::new(2 * n, 1, BitDepth::Eight, pixels).unwrap();
        prop_assert_eq!(otsu_threshold(&image).unwrap(), lo);
    }
}
