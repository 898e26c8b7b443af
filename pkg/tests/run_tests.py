"""
测试运行脚本
运行所有单元测试并生成报告
"""

import os
import sys
import time
import unittest

# 添加项目根目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

TEST_MODULES = [
    "tests.test_utils",
    "tests.test_tensor",
    "tests.test_model",
    "tests.test_loss",
    "tests.test_optim",
    "tests.test_data",
    "tests.test_eval",
    "tests.test_cli",
    "tests.test_acceptance",
]


def _print_problems(title, problems):
    if not problems:
        return
    print(f"\n{title}:")
    print("-" * 40)
    for test, traceback in problems:
        print(f"✗ {test}")
        print(f"  错误: {traceback.strip().splitlines()[-1]}")
        print()


def run_all_tests():
    """运行所有测试"""
    print("=" * 60)
    print("SSVR 项目单元测试")
    if os.environ.get("SSVR_SLOW_TESTS") != "1":
        print("(未设置 SSVR_SLOW_TESTS=1，跳过耗时的验收测试)")
    print("=" * 60)

    loader = unittest.TestLoader()
    suite = unittest.TestSuite()

    for module_name in TEST_MODULES:
        try:
            module = __import__(module_name, fromlist=[""])
            suite.addTests(loader.loadTestsFromModule(module))
            print(f"✓ 已加载测试模块: {module_name}")
        except ImportError as e:
            print(f"✗ 无法加载测试模块 {module_name}: {e}")

    print("\n开始运行测试...")
    print("-" * 60)

    start_time = time.time()
    runner = unittest.TextTestRunner(verbosity=2, stream=sys.stdout, descriptions=True, failfast=False)
    result = runner.run(suite)
    duration = time.time() - start_time

    print("\n" + "=" * 60)
    print("测试结果摘要")
    print("=" * 60)
    print(f"运行时间: {duration:.2f} 秒")
    print(f"测试用例总数: {result.testsRun}")
    print(f"成功: {result.testsRun - len(result.failures) - len(result.errors) - len(result.skipped)}")
    print(f"跳过: {len(result.skipped)}")
    print(f"失败: {len(result.failures)}")
    print(f"错误: {len(result.errors)}")

    _print_problems("失败的测试", result.failures)
    _print_problems("错误的测试", result.errors)

    return result.wasSuccessful()


def run_specific_test(test_name):
    """
    运行特定的测试

    支持 tests.test_loss.TestKL.test_standard_normal_is_zero 这样的完整名称，
    也支持 TestKL.test_standard_normal_is_zero（在所有测试模块中查找）
    """
    print(f"运行特定测试: {test_name}")
    loader = unittest.TestLoader()

    try:
        if test_name.startswith("tests."):
            suite = loader.loadTestsFromName(test_name)
        else:
            parts = test_name.split(".")
            if len(parts) != 2:
                print(f"错误: 测试名称格式不正确: {test_name}")
                return False
            class_name, method_name = parts
            suite = None
            for module_name in TEST_MODULES:
                module = __import__(module_name, fromlist=[""])
                test_class = getattr(module, class_name, None)
                if test_class is not None:
                    suite = unittest.TestSuite([test_class(method_name)])
                    break
            if suite is None:
                print(f"错误: 未找到测试: {test_name}")
                return False
    except (ImportError, AttributeError, ValueError) as e:
        print(f"错误: 无法加载测试 {test_name}: {e}")
        return False

    result = unittest.TextTestRunner(verbosity=2).run(suite)
    return result.wasSuccessful()


def run_test_coverage():
    """运行测试覆盖率分析"""
    try:
        import coverage
    except ImportError:
        print("警告: 未安装coverage模块，跳过覆盖率分析")
        print("安装命令: pip install coverage")
        return run_all_tests()

    print("运行测试覆盖率分析...")
    cov = coverage.Coverage(source=["app"])
    cov.start()
    success = run_all_tests()
    cov.stop()
    cov.save()

    print("\n生成覆盖率报告...")
    cov.report()
    cov.html_report(directory="htmlcov")
    print("HTML覆盖率报告已生成到 htmlcov/ 目录")
    return success


def main():
    """主函数"""
    if len(sys.argv) > 1:
        command = sys.argv[1]
        if command in ("--help", "-h"):
            print("用法:")
            print("  python run_tests.py                       # 运行所有测试")
            print("  python run_tests.py --coverage            # 运行测试并生成覆盖率报告")
            print("  python run_tests.py TestCase.test_method  # 运行特定测试")
            print("  python run_tests.py --help                # 显示帮助信息")
            print("  SSVR_SLOW_TESTS=1 python run_tests.py     # 包含耗时的验收测试")
            return
        if command == "--coverage":
            success = run_test_coverage()
        else:
            success = run_specific_test(command)
    else:
        success = run_all_tests()

    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
