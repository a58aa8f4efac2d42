fn main() {
    std::process::exit(budgetsvm::cli::run());
}
