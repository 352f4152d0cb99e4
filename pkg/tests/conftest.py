def pytest_runtest_logreport(report):
    """Print one verdict line per acceptance criterion as it finishes."""
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        if report.skipped:
            reason = ""
            if isinstance(report.longrepr, tuple):
                reason = f" ({report.longrepr[2]})"
            print(f"\nACCEPTANCE {name}: SKIP{reason}")
        else:
            print(f"\nACCEPTANCE {name}: {'PASS' if report.passed else 'FAIL'}")
    elif report.when == "setup" and report.skipped:
        print(f"\nACCEPTANCE {name}: SKIP")
