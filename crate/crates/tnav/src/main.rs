fn main() {
    std::process::exit(tnav::cli::run());
}
