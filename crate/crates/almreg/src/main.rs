fn main() {
    std::process::exit(almreg::harness::cli_main());
}
