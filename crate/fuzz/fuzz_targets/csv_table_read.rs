#![no_main]

use encsched::table::{parse_number, Table};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = Table::read_from(data) {
        let text = table.to_csv_string();
        let back = Table::from_csv_str(&text).expect("written table reads back");
        assert_eq!(back.to_csv_string(), text);
        for row in table.rows() {
            for cell in row {
                let _ = parse_number(cell);
            }
        }
    }
});
