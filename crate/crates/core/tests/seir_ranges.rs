use trim_forest::datasets::{Region, SeirSpec, SEIR_PARAMETER_NAMES};

const FIXTURE: &str = include_str!("fixtures/seir_ranges.csv");

fn parse(cell: &str) -> f64 {
    cell.parse()
        .unwrap_or_else(|_| panic!("bad fixture cell {cell}"))
}

#[test]
fn ranges_match_the_published_table() {
    let mut lines = FIXTURE.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "parameter,liberia_min,liberia_max,sierra_leone_min,sierra_leone_max"
    );
    let liberia = SeirSpec::new(Region::Liberia);
    let sierra = SeirSpec::new(Region::SierraLeone);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), SEIR_PARAMETER_NAMES.len());
    for (k, row) in rows.iter().enumerate() {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[0], SEIR_PARAMETER_NAMES[k]);
        assert_eq!(
            liberia.ranges[k],
            (parse(cells[1]), parse(cells[2])),
            "{}",
            cells[0]
        );
        assert_eq!(
            sierra.ranges[k],
            (parse(cells[3]), parse(cells[4])),
            "{}",
            cells[0]
        );
    }
}
