fn main() {
    std::process::exit(sgdkf::cli::run());
}
