#[path = "../../core/tests/support/mod.rs"]
mod support;

use bioproto::parser::{parse_protocol, pretty_print};
use bioproto::units::UnitSystem;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pretty_print_parses_back(seed in any::<u64>(), nano in any::<bool>()) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let p = support::Gen::new(&mut rng, 3).closed(4);
        let crn = support::inert(3);
        let units = if nano { UnitSystem::new("nM", "s").unwrap() } else { UnitSystem::default() };
        let text = pretty_print(&p, &crn, &units);
        let back = parse_protocol(&text, &crn, &units).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back.protocol, p, "{}", text);
    }
}
